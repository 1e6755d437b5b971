"""Noise-free transport baselines: Lagrangian particle flow and quantile ODE.

Both integrate the self-consistent drift b(., mu_t) with mu_t carried along
the flow; they are the zero-noise, zero-viscosity limits the stochastic
solver is validated against.  The integrator is explicit midpoint (second
order), deliberately more accurate than the first-order splitting used on
the stochastic side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .interaction import KernelSpec
from .torus import EquivariantMap, GridSpec, TorusMeasure

__all__ = ["FlowState", "evolve_lagrangian", "evolve_quantile"]


class MonotonicityError(RuntimeError):
    """The transported map lost monotonicity; the step size is too large."""


@dataclass
class FlowState:
    """Flow map x(., t) on the grid nodes together with the moved measure."""

    map: EquivariantMap
    mu: TorusMeasure
    t: float
    extra: np.ndarray | None = None  # user-supplied points moved by the flow


def _drift(points, atom_pos, weights, kernel):
    """b(p, mu) = sum_j w_j h(p - y_j) for the current atom positions y_j."""
    vals = kernel.eval_h(points[:, None] - atom_pos[None, :])
    return vals @ weights


def _n_steps(T, dt):
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} must be a positive multiple of dt={dt}")
    return steps


def evolve_lagrangian(
    mu0: TorusMeasure,
    kernel: KernelSpec,
    T: float,
    dt: float,
    grid: GridSpec | None = None,
    extra_points=None,
) -> FlowState:
    """Move every point of the circle by dx = b(x, mu_t) dt, mu_t = x_t # mu0.

    The flow map is tracked on the grid nodes (winding one), the measure via
    its atom positions; extra_points, if given, are carried along as passive
    tracers and returned in FlowState.extra.
    """
    if grid is None:
        grid = GridSpec(256)
    steps = _n_steps(T, dt)
    atom0, weights = mu0.as_atoms()
    nodes = grid.nodes.copy()
    n_nodes = len(nodes)
    pts = [nodes, atom0.astype(float).copy()]
    if extra_points is not None:
        pts.append(np.asarray(extra_points, dtype=float).copy())
    splits = np.cumsum([len(p) for p in pts])[:-1]
    z = np.concatenate(pts)
    n_atoms = len(atom0)

    for _ in range(steps):
        atoms = z[n_nodes : n_nodes + n_atoms]
        k1 = _drift(z, atoms, weights, kernel)
        zh = z + 0.5 * dt * k1
        k2 = _drift(zh, zh[n_nodes : n_nodes + n_atoms], weights, kernel)
        z = z + dt * k2

    parts = np.split(z, splits)
    flow_map = EquivariantMap(grid, parts[0], 1.0)
    if not flow_map.is_monotone(tol=1e-8):
        raise MonotonicityError("flow map lost monotonicity; reduce dt")
    mu_t = TorusMeasure(atoms=np.mod(parts[1], 1.0), weights=weights)
    extra = parts[2] if extra_points is not None else None
    return FlowState(map=flow_map, mu=mu_t, t=steps * dt, extra=extra)


def evolve_quantile(
    F0: EquivariantMap, kernel: KernelSpec, T: float, dt: float
) -> EquivariantMap:
    """Integrate dF = b(F, Leb o F^{-1}) dt on the quantile samples.

    The measure is never materialised: with mu_t the pushforward of Lebesgue
    under F_t, the drift at F(u) is the plain node average of h(F(u) - F(a)).
    Equivalent to flowing the initial samples with evolve_lagrangian.
    """
    if not F0.is_monotone():
        raise ValueError("initial map must be monotone")
    steps = _n_steps(T, dt)
    n = F0.grid.n_cells
    w = np.full(n, 1.0 / n)
    F = F0.values.copy()
    for _ in range(steps):
        k1 = _drift(F, F, w, kernel)
        Fh = F + 0.5 * dt * k1
        k2 = _drift(Fh, Fh, w, kernel)
        F = F + dt * k2
    out = EquivariantMap(F0.grid, F, F0.winding)
    if not out.is_monotone(tol=1e-8):
        raise MonotonicityError("quantile map lost monotonicity; reduce dt")
    return out
