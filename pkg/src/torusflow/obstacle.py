"""Deterministic parabolic obstacle problem: heat dynamics, reflection at -v.

Given a continuous obstacle path v with v(0, .) >= 0, produce the pair
(z, eta) with z >= -v, z(0) = 0, heat evolution plus a nonnegative
reflection measure acting only on the contact set.  The time stepper is a
backward-Euler heat half-step followed by pointwise projection, the discrete
Skorokhod map; eta is stored as per-(cell, step) increments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .heat import SpectralPlan
from .torus import GridSpec, PeriodicField

__all__ = [
    "ObstaclePath",
    "ObstacleSolution",
    "solve_obstacle",
    "solve_obstacle_penalised",
    "weak_form_residual",
]


@dataclass
class ObstaclePath:
    """Obstacle samples v[n, i] at times n*dt, nodes i/n_cells."""

    grid: GridSpec
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_cells:
            raise ValueError("obstacle values must be (n_times, n_cells)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1


@dataclass
class ObstacleSolution:
    """z[n, i] with z(0) = 0 and eta increments per (step, cell)."""

    grid: GridSpec
    dt: float
    z: np.ndarray
    eta: np.ndarray  # (n_steps, n_cells), mass = correction * spacing

    def total_eta_mass(self) -> float:
        return float(self.eta.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "z", "eta_increment"])
            nodes = self.grid.nodes
            for n in range(self.z.shape[0]):
                t = n * self.dt
                for i, x in enumerate(nodes):
                    eta = self.eta[n - 1, i] if n > 0 else 0.0
                    writer.writerow(
                        [f"{t:.17g}", f"{x:.17g}", f"{self.z[n, i]:.17g}", f"{eta:.17g}"]
                    )


def _implicit_heat_factor(grid: GridSpec, dt: float) -> np.ndarray:
    plan = SpectralPlan(grid)
    return 1.0 / (1.0 + dt * plan.eigenvalues)


def solve_obstacle(v: ObstaclePath) -> ObstacleSolution:
    """Backward-Euler heat step then projection z <- max(z, -v).

    The projection correction times the cell width is recorded as the eta
    increment, so the discrete weak identity
    <z_{n+1} - z_n, phi> = dt <z*, Lap phi> + sum phi deta holds exactly and
    (z + v) deta = 0 cell by cell.
    """
    if np.any(v.values[0] < -1e-14):
        raise ValueError("obstacle must satisfy v(0, .) >= 0")
    grid, dt = v.grid, v.dt
    n = grid.n_cells
    n_steps = v.n_steps
    factor = _implicit_heat_factor(grid, dt)
    z = np.zeros((n_steps + 1, n))
    eta = np.zeros((n_steps, n))
    cur = z[0]
    for s in range(n_steps):
        pred = np.fft.irfft(np.fft.rfft(cur) * factor, n)
        nxt = np.maximum(pred, -v.values[s + 1])
        eta[s] = (nxt - pred) * grid.spacing
        z[s + 1] = nxt
        cur = nxt
    return ObstacleSolution(grid=grid, dt=dt, z=z, eta=eta)


def solve_obstacle_penalised(v: ObstaclePath, epsilon: float) -> np.ndarray:
    """Penalised dynamics dz = Lap z + (1/eps)(z + v)^- with implicit penalty.

    The stiff term is solved pointwise per step, which permits eps << dt.
    Returns the z path only (no reflection ledger in the penalised form).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid, dt = v.grid, v.dt
    n = grid.n_cells
    factor = _implicit_heat_factor(grid, dt)
    r = dt / epsilon
    z = np.zeros((v.n_steps + 1, n))
    cur = z[0]
    for s in range(v.n_steps):
        pred = np.fft.irfft(np.fft.rfft(cur) * factor, n)
        vn = v.values[s + 1]
        # z = pred + r (z + v)^- pointwise; violation persists iff pred + v < 0
        violated = pred + vn < 0
        nxt = pred.copy()
        nxt[violated] = (pred[violated] - r * vn[violated]) / (1.0 + r)
        z[s + 1] = nxt
        cur = nxt
    return z


def weak_form_residual(sol: ObstacleSolution, test: PeriodicField) -> float:
    """Defect of <z_t, phi> - <z_0, phi> = int <z, Lap phi> + int int phi deta.

    The Laplacian of the test function uses the discrete symbol, the time
    integral the right endpoint, matching the solver's implicit step; the
    residual is O(dt) for active obstacles.
    """
    grid, dt = sol.grid, sol.dt
    n = grid.n_cells
    plan = SpectralPlan(grid)
    lap_phi = np.fft.irfft(np.fft.rfft(test.values) * (-plan.eigenvalues), n)
    dx = grid.spacing
    lhs = dx * np.dot(sol.z[-1] - sol.z[0], test.values)
    heat_term = dt * dx * np.einsum("ni,i->", sol.z[1:], lap_phi)
    eta_term = float(np.dot(sol.eta.sum(axis=0), test.values))
    return float(abs(lhs - heat_term - eta_term))
