"""Coupled solver for the reflected quantile-derivative system.

The state is (g, M): g >= 0 is the derivative of the quantile-type map A and
M its mean level.  Per step the solver applies the exact heat propagator,
an explicit reaction dt * beta * g with beta = b'(A(.), mu) evaluated along
the current state, the white-noise field increment, and finally either a
projection onto g >= 0 (with the correction recorded as a reflection
measure) or an implicit pointwise penalisation.  M follows the interaction
drift plus its own Brownian motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heat import SpectralPlan
from .interaction import KernelSpec, b_on_quantile, beta_field, m_drift
from .noise import NoiseIncrement, SeedSpec, sample_increments
from .obstacle import ObstaclePath, solve_obstacle
from .torus import GridSpec, PeriodicField, pushforward_measure, reconstruct_A

__all__ = [
    "CoupledState",
    "SolverConfig",
    "ReflectionLedger",
    "Trajectory",
    "simulate",
    "picard_solve",
    "check_solution",
    "ConfigError",
    "PicardDivergenceError",
]


class ConfigError(ValueError):
    """Invalid solver configuration."""


class PicardDivergenceError(RuntimeError):
    """Picard iterates drifted apart for several consecutive sweeps."""


@dataclass
class CoupledState:
    """Snapshot (g, M) at time t."""

    g: PeriodicField
    M: float
    t: float = 0.0

    def measure(self):
        """Pushforward of Lebesgue measure under the reconstructed map."""
        return pushforward_measure(reconstruct_A(self.g, self.M))


@dataclass
class SolverConfig:
    """Numerical parameters for the coupled stepper.

    mode selects how the constraint g >= 0 is enforced: 'projected' records
    the truncated mass in a reflection ledger, 'penalised' relaxes it with
    an implicit pointwise penalty of strength 1/epsilon.  heat_scheme is
    'spectral' (exact exponential of the discrete Laplacian) or 'explicit'
    (forward Euler, subject to dt <= spacing^2 / 4).
    """

    dt: float
    n_steps: int
    mode: str = "projected"
    epsilon: float = 1e-6
    m_drift_variant: str = "unweighted"
    noise_scale: float = 1.0
    heat_scheme: str = "spectral"
    laplacian: bool = True

    def validate(self, grid: GridSpec) -> None:
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.mode not in ("projected", "penalised"):
            raise ConfigError(f"unknown constraint mode {self.mode!r}")
        if self.mode == "penalised" and self.epsilon <= 0:
            raise ConfigError("penalised mode needs epsilon > 0")
        if self.heat_scheme not in ("spectral", "explicit"):
            raise ConfigError(f"unknown heat scheme {self.heat_scheme!r}")
        if self.m_drift_variant not in ("unweighted", "weighted"):
            raise ConfigError(f"unknown m-drift variant {self.m_drift_variant!r}")
        if self.heat_scheme == "explicit" and self.laplacian:
            limit = grid.spacing**2 / 4.0
            if self.dt > limit * (1.0 + 1e-12):
                raise ConfigError(
                    f"explicit heat scheme unstable: dt={self.dt} exceeds "
                    f"spacing^2/4={limit}"
                )

    def step_multiplier(self, grid: GridSpec) -> np.ndarray:
        """Per-step rfft multiplier of the heat half-step."""
        if not self.laplacian:
            return np.ones(grid.n_cells // 2 + 1)
        plan = SpectralPlan(grid)
        if self.heat_scheme == "spectral":
            return plan.multiplier(self.dt)
        return 1.0 - self.dt * plan.eigenvalues


@dataclass
class ReflectionLedger:
    """Per-(step, cell) mass added by the projection; columns index cells."""

    grid: GridSpec
    dt: float
    increments: np.ndarray  # (n_steps, n_cells)

    def total_mass(self) -> float:
        return float(self.increments.sum())

    def mass_per_step(self) -> np.ndarray:
        return self.increments.sum(axis=1)


@dataclass
class Trajectory:
    """Full record of one solver run, including the noise that drove it."""

    grid: GridSpec
    config: SolverConfig
    times: np.ndarray
    g_path: np.ndarray  # (n_steps + 1, n_cells)
    M_path: np.ndarray  # (n_steps + 1,)
    ledger: ReflectionLedger
    noise: NoiseIncrement
    seed: SeedSpec | None = None
    beta_path: np.ndarray | None = None  # (n_steps, n_cells), left endpoints
    m_drift_path: np.ndarray | None = None  # (n_steps,)
    info: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def state(self, idx: int) -> CoupledState:
        return CoupledState(
            g=PeriodicField(self.grid, self.g_path[idx].copy()),
            M=float(self.M_path[idx]),
            t=float(self.times[idx]),
        )

    @property
    def final_state(self) -> CoupledState:
        return self.state(self.n_steps)


def _resolve_noise(grid, cfg, seed, t0, noise):
    """Draw (or slice) the driving noise, honouring a start-time offset.

    With t0 > 0 the increments before t0 are drawn and discarded, so a run
    started at time s sees exactly the tail of the noise a time-0 run with
    the same seed would have seen.
    """
    offset = int(round(t0 / cfg.dt))
    if abs(offset * cfg.dt - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ConfigError(f"t0={t0} is not a multiple of dt={cfg.dt}")
    if noise is not None:
        if noise.dW.shape != (grid.n_cells, cfg.n_steps):
            raise ConfigError("supplied noise does not match grid/steps")
        return noise
    if seed is None:
        raise ConfigError("either a seed or explicit noise is required")
    full = sample_increments(grid, cfg.dt, offset + cfg.n_steps, seed)
    return NoiseIncrement(dW=full.dW[:, offset:], dB=full.dB[offset:])


def simulate(
    phi: PeriodicField,
    x: float,
    kernel: KernelSpec,
    cfg: SolverConfig,
    seed: SeedSpec | None = None,
    t0: float = 0.0,
    noise: NoiseIncrement | None = None,
) -> Trajectory:
    """Run the coupled stepper from the initial state (phi, x).

    The reaction coefficient is re-evaluated from the live state each step
    (left endpoint); its path is stored on the trajectory together with the
    noise, so weak-form residuals and likelihood ratios can be recomputed
    exactly afterwards.
    """
    grid = phi.grid
    cfg.validate(grid)
    if np.any(phi.values < -1e-12):
        raise ConfigError("initial profile must be nonnegative")
    nz = _resolve_noise(grid, cfg, seed, t0, noise)

    n = grid.n_cells
    steps = cfg.n_steps
    dt = cfg.dt
    mult = cfg.step_multiplier(grid)
    g_path = np.empty((steps + 1, n))
    M_path = np.empty(steps + 1)
    beta_path = np.empty((steps, n))
    drift_path = np.empty(steps)
    eta = np.zeros((steps, n))
    g_path[0] = np.maximum(phi.values, 0.0)
    M_path[0] = x
    r = dt / cfg.epsilon

    g = g_path[0].copy()
    M = float(x)
    for s in range(steps):
        state = CoupledState(PeriodicField(grid, g), M)
        beta = beta_field(state, kernel).values
        a = m_drift(state, kernel, cfg.m_drift_variant)
        beta_path[s] = beta
        drift_path[s] = a
        p = np.fft.irfft(np.fft.rfft(g) * mult, n)
        p += dt * beta * g
        p += cfg.noise_scale * nz.dW[:, s] / grid.spacing
        if cfg.mode == "projected":
            g = np.maximum(p, 0.0)
            eta[s] = (g - p) * grid.spacing
        else:
            g = np.where(p < 0.0, p / (1.0 + r), p)
        M = M + dt * a + cfg.noise_scale * nz.dB[s]
        g_path[s + 1] = g
        M_path[s + 1] = M

    return Trajectory(
        grid=grid,
        config=cfg,
        times=t0 + dt * np.arange(steps + 1),
        g_path=g_path,
        M_path=M_path,
        ledger=ReflectionLedger(grid=grid, dt=dt, increments=eta),
        noise=nz,
        seed=seed,
        beta_path=beta_path,
        m_drift_path=drift_path,
    )


def picard_solve(
    phi: PeriodicField,
    x: float,
    kernel: KernelSpec,
    cfg: SolverConfig,
    seed: SeedSpec | None = None,
    n_iter: int = 6,
    noise: NoiseIncrement | None = None,
) -> Trajectory:
    """Fixed-point construction: freeze the drift along the previous iterate.

    Each sweep solves the linear problem g = f + z, where f carries heat,
    the frozen forcing and the noise, and z solves the obstacle problem with
    obstacle f; M integrates the frozen scalar drift.  The sup-distance
    between consecutive iterates is reported in info['picard_distances'];
    three consecutive increases raise PicardDivergenceError.
    """
    grid = phi.grid
    cfg.validate(grid)
    if cfg.mode != "projected":
        raise ConfigError("picard_solve constructs the reflected (projected) solution")
    if np.any(phi.values < -1e-12):
        raise ConfigError("initial profile must be nonnegative")
    if n_iter < 1:
        raise ConfigError("n_iter must be >= 1")
    nz = _resolve_noise(grid, cfg, seed, 0.0, noise)

    n = grid.n_cells
    steps = cfg.n_steps
    dt = cfg.dt
    mult = cfg.step_multiplier(grid)
    xi = cfg.noise_scale * nz.dW / grid.spacing  # (n, steps)

    g0 = np.maximum(phi.values, 0.0)
    # iterate 0: constant-in-time frozen state
    g_prev = np.tile(g0, (steps + 1, 1))
    M_prev = np.full(steps + 1, float(x))

    distances = []
    grow = 0
    result = None
    for sweep in range(n_iter):
        # frozen reaction forcing and scalar drift along the previous iterate
        forcing = np.empty((steps, n))
        a_path = np.empty(steps)
        for s in range(steps):
            st = CoupledState(PeriodicField(grid, g_prev[s]), float(M_prev[s]))
            forcing[s] = beta_field(st, kernel).values * g_prev[s]
            a_path[s] = m_drift(st, kernel, cfg.m_drift_variant)

        f = np.empty((steps + 1, n))
        f[0] = g0
        for s in range(steps):
            f[s + 1] = (
                np.fft.irfft(np.fft.rfft(f[s]) * mult, n)
                + dt * forcing[s]
                + xi[:, s]
            )
        zsol = solve_obstacle(ObstaclePath(grid=grid, dt=dt, values=f))
        g_new = f + zsol.z

        M_new = np.empty(steps + 1)
        M_new[0] = x
        for s in range(steps):
            M_new[s + 1] = M_new[s] + dt * a_path[s] + cfg.noise_scale * nz.dB[s]

        dist = float(
            np.max(np.abs(g_new - g_prev)) + np.max(np.abs(M_new - M_prev))
        )
        distances.append(dist)
        if len(distances) > 1 and dist > distances[-2]:
            grow += 1
            if grow >= 3:
                raise PicardDivergenceError(
                    f"iterate distances grew 3 times in a row: {distances}"
                )
        else:
            grow = 0
        g_prev, M_prev = g_new, M_new
        result = (g_new, M_new, zsol.eta)

    g_fin, M_fin, eta = result
    return Trajectory(
        grid=grid,
        config=cfg,
        times=dt * np.arange(steps + 1),
        g_path=g_fin,
        M_path=M_fin,
        ledger=ReflectionLedger(grid=grid, dt=dt, increments=eta),
        noise=nz,
        seed=seed,
        info={"picard_distances": distances},
    )


def check_solution(
    traj: Trajectory, kernel: KernelSpec, tests: list[PeriodicField]
) -> dict:
    """Weak-form residuals of a trajectory against smooth test functions.

    For each phi the defect of
    <g_T, phi> - <g_0, phi> = int <g, Lap phi> + int <beta g, phi>
    + int phi dW + int int phi deta is evaluated with the left-endpoint sums
    the stepper uses; also reports the complementarity defect sum g . deta.
    """
    grid = traj.grid
    cfg = traj.config
    n = grid.n_cells
    dx = grid.spacing
    dt = cfg.dt
    plan = SpectralPlan(grid)

    if traj.beta_path is not None:
        beta = traj.beta_path
    else:
        beta = np.empty((traj.n_steps, n))
        for s in range(traj.n_steps):
            beta[s] = beta_field(traj.state(s), kernel).values
    reaction = beta * traj.g_path[:-1]

    residuals = []
    for phi in tests:
        if phi.grid.n_cells != n:
            raise ConfigError("test function grid mismatch")
        lap_phi = np.fft.irfft(np.fft.rfft(phi.values) * (-plan.eigenvalues), n)
        lhs = dx * float(np.dot(traj.g_path[-1] - traj.g_path[0], phi.values))
        heat = dt * dx * float(np.einsum("si,i->", traj.g_path[:-1], lap_phi))
        react = dt * dx * float(np.einsum("si,i->", reaction, phi.values))
        noise = cfg.noise_scale * float(
            np.einsum("is,i->", traj.noise.dW, phi.values)
        )
        refl = float(np.dot(traj.ledger.increments.sum(axis=0), phi.values))
        residuals.append(abs(lhs - heat - react - noise - refl))

    comp = float(
        np.sum(np.abs(traj.g_path[1:] * traj.ledger.increments))
    )
    return {
        "residuals": residuals,
        "max_residual": max(residuals) if residuals else 0.0,
        "complementarity_defect": comp,
        "min_g": float(traj.g_path.min()),
        "eta_mass": traj.ledger.total_mass(),
    }
