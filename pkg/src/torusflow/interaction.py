"""Interaction drifts from a convolution kernel h on the circle.

The drift is b(u, mu) = int h(u - v) mu(dv) and b'(u, mu) its u-derivative,
evaluated with h'.  For solver states the measure is never materialised:
with mu = Lebesgue pushed through the quantile-type map A, the drift is the
plain quadrature int_0^1 h(u - A(a)) da.

Kernels are carried as periodic samples plus derivative samples (cubic
periodic interpolation in between); analytically known kernels may register
closures, which are then used directly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .noise import SeedSpec
from .torus import (
    GridSpec,
    PeriodicField,
    TorusMeasure,
    equivariant_l2_distance,
    quantile_from_atoms,
    reconstruct_A,
    torus_distance,
)

__all__ = [
    "KernelSpec",
    "AssumptionReport",
    "eval_b",
    "eval_b_prime",
    "beta_field",
    "m_drift",
    "probe_assumptions",
    "load_kernel_csv",
]


class KernelSpec:
    """Bounded smooth interaction kernel h with derivative h'."""

    def __init__(self, h: PeriodicField, h_prime: PeriodicField, bound=None,
                 h_fn=None, h_prime_fn=None):
        if h.grid.n_cells != h_prime.grid.n_cells:
            raise ValueError("h and h' must share a grid")
        self.h = h
        self.h_prime = h_prime
        self.h_fn = h_fn
        self.h_prime_fn = h_prime_fn
        if bound is None:
            bound = max(h.sup_norm(), h_prime.sup_norm())
        self.bound = float(bound)
        self._h_spline = None
        self._hp_spline = None

    @classmethod
    def from_callables(cls, h_fn, h_prime_fn, n_samples: int = 256, bound=None):
        grid = GridSpec(n_samples)
        u = grid.nodes
        return cls(
            PeriodicField(grid, h_fn(u)),
            PeriodicField(grid, h_prime_fn(u)),
            bound=bound,
            h_fn=h_fn,
            h_prime_fn=h_prime_fn,
        )

    @classmethod
    def constant(cls, c: float, n_samples: int = 16):
        return cls.from_callables(
            lambda u: np.full_like(u, float(c), dtype=float),
            lambda u: np.zeros_like(u, dtype=float),
            n_samples=n_samples,
            bound=abs(c),
        )

    @classmethod
    def sine(cls, amplitude: float = 1.0, n_samples: int = 256):
        a = float(amplitude)
        return cls.from_callables(
            lambda u: a * np.sin(2.0 * np.pi * u),
            lambda u: 2.0 * np.pi * a * np.cos(2.0 * np.pi * u),
            n_samples=n_samples,
            bound=2.0 * np.pi * abs(a),
        )

    def _spline(self, values, grid):
        x = np.append(grid.nodes, 1.0)
        y = np.append(values, values[0])
        return CubicSpline(x, y, bc_type="periodic")

    def eval_h(self, x):
        if self.h_fn is not None:
            return self.h_fn(np.asarray(x, dtype=float))
        if self._h_spline is None:
            self._h_spline = self._spline(self.h.values, self.h.grid)
        return self._h_spline(np.mod(x, 1.0))

    def eval_h_prime(self, x):
        if self.h_prime_fn is not None:
            return self.h_prime_fn(np.asarray(x, dtype=float))
        if self._hp_spline is None:
            self._hp_spline = self._spline(self.h_prime.values, self.h_prime.grid)
        return self._hp_spline(np.mod(x, 1.0))


@dataclass
class AssumptionReport:
    """Empirical Lipschitz and sup estimates for the drift pair (b, b')."""

    lipschitz_estimate_b: float
    lipschitz_estimate_b_prime: float
    sup_b: float
    sup_b_prime: float
    sample_count: int


def _measure_points(mu: TorusMeasure):
    locs, weights = mu.as_atoms()
    return locs, weights


def eval_b(u, mu: TorusMeasure, kernel: KernelSpec):
    """b(u, mu) = int h(u - v) mu(dv)."""
    locs, weights = _measure_points(mu)
    u = np.asarray(u, dtype=float)
    vals = kernel.eval_h(u[..., None] - locs)
    return np.sum(vals * weights, axis=-1)


def eval_b_prime(u, mu: TorusMeasure, kernel: KernelSpec):
    """b'(u, mu) = int h'(u - v) mu(dv)."""
    locs, weights = _measure_points(mu)
    u = np.asarray(u, dtype=float)
    vals = kernel.eval_h_prime(u[..., None] - locs)
    return np.sum(vals * weights, axis=-1)


def b_on_quantile(points, quantile_values, kernel: KernelSpec):
    """b at given points against the measure with quantile samples A(a_j)."""
    diffs = np.asarray(points)[:, None] - quantile_values[None, :]
    return kernel.eval_h(diffs).mean(axis=1)


def b_prime_on_quantile(points, quantile_values, kernel: KernelSpec):
    diffs = np.asarray(points)[:, None] - quantile_values[None, :]
    return kernel.eval_h_prime(diffs).mean(axis=1)


def beta_field(state, kernel: KernelSpec) -> PeriodicField:
    """Reaction coefficient z -> b'(A([g, M])(z), mu) along the state."""
    A = reconstruct_A(state.g, state.M)
    vals = b_prime_on_quantile(A.values, A.values, kernel)
    return PeriodicField(state.g.grid, vals)


def m_drift(state, kernel: KernelSpec, variant: str = "unweighted") -> float:
    """Scalar drift of the mean level M.

    'unweighted': int_T b(A(z), mu) dz; 'weighted': int b(A(x), mu) g(x) dx,
    the alternative form with the derivative as integration weight.
    """
    A = reconstruct_A(state.g, state.M)
    b_vals = b_on_quantile(A.values, A.values, kernel)
    if variant == "unweighted":
        return float(np.mean(b_vals))
    if variant == "weighted":
        return float(np.mean(b_vals * state.g.values))
    raise ValueError(f"unknown m-drift variant {variant!r}")


def probe_assumptions(
    kernel: KernelSpec,
    samples: int,
    seed: SeedSpec,
    n_atoms: int = 6,
    probe_grid: GridSpec | None = None,
) -> AssumptionReport:
    """Max observed difference quotients of (b, b') over random (u, mu) pairs.

    The input distance is the periodic metric plus the integer-shift L2
    distance of the quantiles, matching the regularity assumptions the
    drift pair is required to satisfy.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if probe_grid is None:
        probe_grid = GridSpec(128)
    rng = seed.rng()
    lip_b = 0.0
    lip_bp = 0.0
    sup_b = 0.0
    sup_bp = 0.0
    for _ in range(samples):
        u1, u2 = rng.random(2)
        mu1 = _random_measure(rng, n_atoms)
        mu2 = _random_measure(rng, n_atoms)
        b1, b2 = eval_b(u1, mu1, kernel), eval_b(u2, mu2, kernel)
        bp1, bp2 = eval_b_prime(u1, mu1, kernel), eval_b_prime(u2, mu2, kernel)
        sup_b = max(sup_b, abs(float(b1)), abs(float(b2)))
        sup_bp = max(sup_bp, abs(float(bp1)), abs(float(bp2)))
        dist = float(torus_distance(u1, u2)) + equivariant_l2_distance(
            quantile_from_atoms(mu1, probe_grid),
            quantile_from_atoms(mu2, probe_grid),
        )
        if dist > 1e-12:
            lip_b = max(lip_b, abs(float(b1 - b2)) / dist)
            lip_bp = max(lip_bp, abs(float(bp1 - bp2)) / dist)
    return AssumptionReport(
        lipschitz_estimate_b=lip_b,
        lipschitz_estimate_b_prime=lip_bp,
        sup_b=sup_b,
        sup_b_prime=sup_bp,
        sample_count=samples,
    )


def _random_measure(rng, n_atoms):
    locs = rng.random(n_atoms)
    w = rng.random(n_atoms)
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return TorusMeasure(atoms=locs, weights=w)


def load_kernel_csv(path, bound=None) -> KernelSpec:
    """Kernel file: CSV with header u,h,h_prime on a uniform grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["u", "h", "h_prime"]:
            raise ValueError(f"unexpected kernel CSV header {header}")
        rows = [(float(r[0]), float(r[1]), float(r[2])) for r in reader]
    grid = GridSpec(len(rows))
    h = PeriodicField(grid, [r[1] for r in rows])
    hp = PeriodicField(grid, [r[2] for r in rows])
    return KernelSpec(h, hp, bound=bound)


def save_kernel_csv(path, kernel: KernelSpec) -> None:
    grid = kernel.h.grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "h", "h_prime"])
        for u, a, bq in zip(grid.nodes, kernel.h.values, kernel.h_prime.values):
            writer.writerow([f"{u:.17g}", f"{a:.17g}", f"{bq:.17g}"])
