"""Shared-noise coupling with a bridge drift, Girsanov ledger, and probes.

Two copies of the system are driven by the same noise; the second receives
the additional drift -(g~ - g)/xi(t), xi(t) = T - t, which contracts the
difference to zero by time T.  Discretely the bridge is applied as the
exact per-step integrating factor rho_n = xi(t_{n+1})/xi(t_n) on the
predictor difference, so in the frozen-coefficient configuration the
contraction ||g~_t - g_t|| <= ||psi - phi|| (T-t)/T holds pathwise by
construction.  The Girsanov ledger records the drift change and yields the
likelihood ratio between the coupled and the free second copy; its
quadratic variation feeds a Pinsker-type total-variation bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from .heat import SpectralPlan
from .interaction import KernelSpec, beta_field, m_drift
from .kernels import run_bridged_loop, run_frozen_loop
from .noise import NoiseIncrement, SeedSpec, sample_increments
from .spde import ConfigError, CoupledState, SolverConfig, Trajectory, simulate
from .torus import MeasureH1, PeriodicField, d12_metric

__all__ = [
    "CouplingConfig",
    "GirsanovLedger",
    "CouplingResult",
    "FellerEstimate",
    "run_coupled_pair",
    "girsanov_log_density",
    "tv_bound_estimate",
    "strong_feller_probe",
    "markov_shift_test",
]

_LOG_CLAMP = 700.0


@dataclass
class CouplingConfig:
    """Bridge horizon and merge policy; the schedule is xi(t) = T - t."""

    T: float
    delta_cap: float
    merge_threshold: float
    replicas: int = 1

    def __post_init__(self):
        if not 0.0 < self.delta_cap < self.T:
            raise ValueError("need 0 < delta_cap < T")
        if self.merge_threshold <= 0:
            raise ValueError("merge_threshold must be positive")

    def xi(self, t: float) -> float:
        return self.T - t


@dataclass
class GirsanovLedger:
    """Per-step pieces of the log likelihood ratio.

    field_integral[s] = <gamma_s, dW_s>, field_qv[s] = dt int gamma_s^2,
    scalar_integral[s] = gamma~_s dB_s, scalar_qv[s] = dt gamma~_s^2.
    The log-density is accumulated with compensated summation and clamped
    at +-700 (flagged) before exponentiation.
    """

    dt: float
    field_integral: np.ndarray
    field_qv: np.ndarray
    scalar_integral: np.ndarray
    scalar_qv: np.ndarray
    clamped: bool = False

    def log_density(self, first: int = 0, last: int | None = None) -> float:
        """Accumulated log-density over the step window [first, last)."""
        sl = slice(first, last)
        terms = (
            list(self.field_integral[sl])
            + list(-0.5 * self.field_qv[sl])
            + list(self.scalar_integral[sl])
            + list(-0.5 * self.scalar_qv[sl])
        )
        val = math.fsum(terms)
        if abs(val) > _LOG_CLAMP:
            self.clamped = True
            val = math.copysign(_LOG_CLAMP, val)
        return val

    def density(self) -> float:
        return math.exp(self.log_density())

    def quadratic_variation(self) -> float:
        """Total int (||gamma||^2 + gamma~^2) dt along the path."""
        return math.fsum(list(self.field_qv) + list(self.scalar_qv))


@dataclass
class CouplingResult:
    """Outcome of one shared-noise coupled run."""

    coupled: bool
    merge_time: float | None
    distance_path: np.ndarray  # (n_steps + 1, 3): t, ||g - g~||_L2, |M - M~|
    ledger: GirsanovLedger
    g_path: np.ndarray
    g_tilde_path: np.ndarray
    M_path: np.ndarray
    M_tilde_path: np.ndarray
    eta_tilde: np.ndarray
    config: CouplingConfig
    solver_config: SolverConfig
    info: dict = field(default_factory=dict)


def _bridge_steps(cfg: CouplingConfig, dt: float) -> int:
    """Number of bridged steps; gluing happens once t >= T - delta_cap."""
    return max(1, int(math.floor((cfg.T - cfg.delta_cap) / dt + 1e-9)))


def run_coupled_pair(
    phi: PeriodicField,
    x: float,
    psi: PeriodicField,
    y: float,
    kernel: KernelSpec,
    cfg: CouplingConfig,
    solver_cfg: SolverConfig,
    seed: SeedSpec | None = None,
    frozen: bool = True,
    noise: NoiseIncrement | None = None,
) -> CouplingResult:
    """Simulate the reference pair and its bridged companion on shared noise.

    frozen=True is the analytical configuration: the reaction term of both
    paths is beta * g evaluated along the reference, so it cancels in the
    difference and the deterministic contraction bound is exact.  With
    frozen=False each path carries its own live coefficients; the bridge is
    still applied, but only the frozen bounds are guaranteed.
    """
    grid = phi.grid
    if psi.grid.n_cells != grid.n_cells:
        raise ConfigError("phi and psi must share a grid")
    solver_cfg.validate(grid)
    if abs(solver_cfg.n_steps * solver_cfg.dt - cfg.T) > 1e-9 * max(1.0, cfg.T):
        raise ConfigError("coupling horizon T must equal n_steps * dt")
    if solver_cfg.noise_scale != 1.0:
        raise ConfigError("the likelihood ledger assumes unit noise scale")

    dt = solver_cfg.dt
    steps = solver_cfg.n_steps
    n = grid.n_cells
    dx = grid.spacing

    live_ref = simulate(phi, x, kernel, solver_cfg, seed=seed, noise=noise)
    nz = live_ref.noise
    xi_field = (nz.dW / dx).T.copy()  # (steps, n)

    times = dt * np.arange(steps + 1)
    nb = _bridge_steps(cfg, dt)
    rho = np.ones(steps)
    rho[:nb] = (cfg.T - times[1 : nb + 1]) / (cfg.T - times[:nb])

    mult = solver_cfg.step_multiplier(grid)
    col = np.fft.irfft(mult, n)
    P = col[(np.arange(n)[:, None] - np.arange(n)[None, :]) % n]
    projected = solver_cfg.mode == "projected"
    r = dt / solver_cfg.epsilon

    beta_dt = dt * live_ref.beta_path
    if frozen:
        zeros = np.zeros((steps, n))
        g_ref, _ = run_frozen_loop(
            P, live_ref.g_path[0], beta_dt, zeros, xi_field, projected, r, dx
        )
        g_til, eta_til, g_dist, g_merge = run_bridged_loop(
            P, g_ref, np.maximum(psi.values, 0.0), beta_dt, xi_field, rho,
            nb, cfg.merge_threshold, projected, r, dx,
        )
        beta_til = live_ref.beta_path
        drift_ref = live_ref.m_drift_path
        drift_til = drift_ref
        reaction_ref = live_ref.beta_path * g_ref[:-1]
        reaction_til = reaction_ref
        M_ref, M_til, m_merge = _couple_scalar(
            x, y, drift_ref, drift_til, nz.dB, rho, nb, cfg.merge_threshold,
            dt, frozen=True,
        )
    else:
        g_ref = live_ref.g_path
        (g_til, eta_til, g_dist, g_merge, beta_til, drift_til,
         M_til_free) = _live_bridged(
            psi, y, kernel, solver_cfg, cfg, g_ref, xi_field, rho, nb, P
        )
        drift_ref = live_ref.m_drift_path
        reaction_ref = live_ref.beta_path * g_ref[:-1]
        reaction_til = beta_til * g_til[:-1]
        M_ref, M_til, m_merge = _couple_scalar(
            x, y, drift_ref, drift_til, nz.dB, rho, nb, cfg.merge_threshold,
            dt, frozen=False,
        )

    m_dist = np.abs(M_ref - M_til)
    distance_path = np.column_stack([times, g_dist, m_dist])

    # likelihood ledger: gamma = (g - g~)/xi on the bridge window minus the
    # reaction difference; evaluated at left endpoints, adapted by design
    active = np.zeros(steps, dtype=bool)
    active[:nb] = True
    if g_merge >= 0:
        active[g_merge:] = False
    xi_t = cfg.T - times[:steps]
    gamma = np.zeros((steps, n))
    gamma[active] = (g_ref[:-1][active] - g_til[:-1][active]) / xi_t[active, None]
    gamma -= reaction_ref - reaction_til

    m_active = np.zeros(steps, dtype=bool)
    m_active[:nb] = True
    if m_merge >= 0:
        m_active[m_merge:] = False
    gamma_s = np.zeros(steps)
    gamma_s[m_active] = (M_ref[:-1][m_active] - M_til[:-1][m_active]) / xi_t[m_active]
    gamma_s -= drift_ref - drift_til

    ledger = GirsanovLedger(
        dt=dt,
        field_integral=np.einsum("si,is->s", gamma, nz.dW),
        field_qv=dt * dx * np.einsum("si,si->s", gamma, gamma),
        scalar_integral=gamma_s * nz.dB,
        scalar_qv=dt * gamma_s**2,
    )

    glue_g = g_merge if g_merge >= 0 else nb
    glue_m = m_merge if m_merge >= 0 else nb
    merge_time = float(times[max(glue_g, glue_m)])
    return CouplingResult(
        coupled=True,
        merge_time=merge_time,
        distance_path=distance_path,
        ledger=ledger,
        g_path=g_ref,
        g_tilde_path=g_til,
        M_path=M_ref,
        M_tilde_path=M_til,
        eta_tilde=eta_til,
        config=cfg,
        solver_config=solver_cfg,
        info={
            "g_merge_step": int(g_merge),
            "m_merge_step": int(m_merge),
            "bridge_steps": int(nb),
            "frozen": frozen,
        },
    )


def _couple_scalar(x, y, drift_ref, drift_til, dB, rho, nb, threshold, dt,
                   frozen):
    """Bridged companion of the scalar mean level, same blend as the field."""
    steps = len(dB)
    M_ref = np.empty(steps + 1)
    M_til = np.empty(steps + 1)
    M_ref[0], M_til[0] = x, y
    merge_step = 0 if abs(x - y) < threshold else -1
    merged = merge_step == 0
    for s in range(steps):
        M_ref[s + 1] = M_ref[s] + dt * drift_ref[s] + dB[s]
        if merged:
            M_til[s + 1] = M_ref[s + 1]
            continue
        if frozen:
            p = M_ref[s + 1] + (M_til[s] - M_ref[s])
        else:
            p = M_til[s] + dt * drift_til[s] + dB[s]
        if s < nb:
            p = M_ref[s + 1] + rho[s] * (p - M_ref[s + 1])
        d = abs(p - M_ref[s + 1])
        if d < threshold or s + 1 >= nb:
            merged = True
            if d < threshold:
                merge_step = s + 1
            p = M_ref[s + 1]
        M_til[s + 1] = p
    return M_ref, M_til, merge_step


def _live_bridged(psi, y, kernel, solver_cfg, cfg, g_ref, xi_field, rho, nb, P):
    """Companion path with its own live coefficients plus the bridge blend."""
    grid = psi.grid
    n = grid.n_cells
    dx = grid.spacing
    dt = solver_cfg.dt
    steps = solver_cfg.n_steps
    projected = solver_cfg.mode == "projected"
    r = dt / solver_cfg.epsilon

    g_til = np.empty((steps + 1, n))
    eta = np.zeros((steps, n))
    dist = np.empty(steps + 1)
    beta_til = np.empty((steps, n))
    drift_til = np.empty(steps)
    g = np.maximum(psi.values, 0.0)
    g_til[0] = g
    dist[0] = np.sqrt(np.mean((g - g_ref[0]) ** 2))
    M = float(y)
    merged = False
    merge_step = -1
    for s in range(steps):
        state = CoupledState(PeriodicField(grid, g), M)
        beta_til[s] = beta_field(state, kernel).values
        drift_til[s] = m_drift(state, kernel, solver_cfg.m_drift_variant)
        if merged:
            g = g_ref[s + 1].copy()
            g_til[s + 1] = g
            dist[s + 1] = 0.0
            continue
        p = P @ g + dt * beta_til[s] * g + xi_field[s]
        if s < nb:
            p = g_ref[s + 1] + rho[s] * (p - g_ref[s + 1])
        if projected:
            g = np.maximum(p, 0.0)
            eta[s] = (g - p) * dx
        else:
            g = np.where(p < 0.0, p / (1.0 + r), p)
        d = np.sqrt(np.mean((g - g_ref[s + 1]) ** 2))
        if d < cfg.merge_threshold or s + 1 >= nb:
            merged = True
            if d < cfg.merge_threshold:
                merge_step = s + 1
            g = g_ref[s + 1].copy()
            d = 0.0
        g_til[s + 1] = g
        dist[s + 1] = d
    # M path recomputed by the caller; return its free drift only
    return g_til, eta, dist, merge_step, beta_til, drift_til, M


def girsanov_log_density(result: CouplingResult) -> float:
    """Accumulated log likelihood ratio of the bridged path's driving law."""
    return result.ledger.log_density()


def tv_bound_estimate(
    phi, x, psi, y, kernel, cfgs, seed: SeedSpec, replicas: int
) -> float:
    """Pinsker-type bound sqrt(E[QV]/2) on the total variation distance.

    QV is the full quadratic variation of the coupling drift change (field
    plus scalar part).  The bound dominates |E F - E F~| for any functional
    with sup-norm at most 1.
    """
    coupling_cfg, solver_cfg = cfgs
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    qv = np.empty(replicas)
    for rep in range(replicas):
        res = run_coupled_pair(
            phi, x, psi, y, kernel, coupling_cfg, solver_cfg,
            seed=seed.with_stream(rep),
        )
        qv[rep] = res.ledger.quadratic_variation()
    return float(np.sqrt(0.5 * qv.mean()))


@dataclass
class FellerEstimate:
    """Monte Carlo gap |E F(end state from (phi,x)) - E F(from (psi,y))|."""

    functional_id: str
    estimate: float
    mc_stderr: float
    input_distance_l2: float
    input_distance_d12: float


def strong_feller_probe(
    F,
    phi: PeriodicField,
    x: float,
    psi: PeriodicField,
    y: float,
    kernel: KernelSpec,
    cfgs: SolverConfig,
    seed: SeedSpec,
    replicas: int,
    functional_id: str = "F",
) -> FellerEstimate:
    """Paired-replica estimate of |P_T F(phi, x) - P_T F(psi, y)|.

    Each replica runs both initial conditions on the same noise realisation
    (common random numbers), so the standard error comes from the paired
    differences and is far smaller than for independent estimates.
    """
    solver_cfg = cfgs
    grid = phi.grid
    diffs = np.empty(replicas)
    for rep in range(replicas):
        nz = sample_increments(
            grid, solver_cfg.dt, solver_cfg.n_steps, seed.with_stream(rep)
        )
        t1 = simulate(phi, x, kernel, solver_cfg, noise=nz)
        t2 = simulate(psi, y, kernel, solver_cfg, noise=nz)
        s1, s2 = t1.final_state, t2.final_state
        diffs[rep] = F(s1.g, s1.M) - F(s2.g, s2.M)
    mean = float(diffs.mean())
    stderr = float(diffs.std(ddof=1) / np.sqrt(replicas)) if replicas > 1 else 0.0
    dl2 = float(np.sqrt(np.mean((phi.values - psi.values) ** 2))) + abs(x - y)
    d12 = d12_metric(MeasureH1(x, phi), MeasureH1(y, psi))
    return FellerEstimate(
        functional_id=functional_id,
        estimate=abs(mean),
        mc_stderr=stderr,
        input_distance_l2=dl2,
        input_distance_d12=d12,
    )


def _panel(traj: Trajectory) -> dict:
    st = traj.final_state
    u = traj.grid.nodes
    return {
        "M": st.M,
        "g_l2": st.g.l2_norm(),
        "g_cos": float(np.mean(st.g.values * np.cos(2.0 * np.pi * u))),
        "eta_mass": traj.ledger.total_mass(),
    }


def markov_shift_test(
    phi: PeriodicField,
    x: float,
    s: float,
    t: float,
    kernel: KernelSpec,
    cfgs: SolverConfig,
    seeds: tuple[SeedSpec, SeedSpec],
    replicas: int,
    return_panel: bool = False,
):
    """Two-sample KS check that a run started at time s looks like a fresh run.

    Sample A starts the solver at time s (so its noise is the time-shifted
    tail of the stream), sample B at time 0, both from (phi, x) over horizon
    t; under time-homogeneity the end states share one law.  The panel holds
    KS p-values for M, ||g||_L2, <g, cos(2 pi .)>, and the reflection mass;
    the returned scalar is the minimum panel p-value.
    """
    if replicas < 50:
        raise ValueError("markov_shift_test needs at least 50 replicas")
    if s < 0 or t <= 0:
        raise ValueError("need s >= 0 and t > 0")
    solver_cfg = cfgs
    seed_a, seed_b = seeds
    names = ["M", "g_l2", "g_cos", "eta_mass"]
    stats_a = {k: np.empty(replicas) for k in names}
    stats_b = {k: np.empty(replicas) for k in names}
    for rep in range(replicas):
        ta = simulate(phi, x, kernel, solver_cfg, seed=seed_a.with_stream(rep), t0=s)
        tb = simulate(phi, x, kernel, solver_cfg, seed=seed_b.with_stream(rep))
        pa, pb = _panel(ta), _panel(tb)
        for k in names:
            stats_a[k][rep] = pa[k]
            stats_b[k][rep] = pb[k]
    panel = {k: float(ks_2samp(stats_a[k], stats_b[k]).pvalue) for k in names}
    p_min = min(panel.values())
    if return_panel:
        return p_min, panel
    return p_min
