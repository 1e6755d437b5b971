"""Coupled pair, Girsanov ledger, and the distributional probes."""

import math

import numpy as np
import pytest

from torusflow.coupling import (
    CouplingConfig,
    girsanov_log_density,
    markov_shift_test,
    run_coupled_pair,
    strong_feller_probe,
    tv_bound_estimate,
)
from torusflow.interaction import KernelSpec
from torusflow.noise import SeedSpec
from torusflow.spde import ConfigError, SolverConfig
from torusflow.torus import GridSpec, PeriodicField


def make_pair(n=32, a=0.25, dm=0.25):
    g = GridSpec(n)
    u = g.nodes
    phi = PeriodicField(g, np.ones(n))
    psi = PeriodicField(g, np.maximum(1.0 + a * np.cos(2 * np.pi * u), 0.0))
    return phi, 0.0, psi, dm


def solver_cfg(T=0.02, dt=1e-4, mode="penalised", eps=1e-5):
    return SolverConfig(dt=dt, n_steps=int(round(T / dt)), mode=mode, epsilon=eps)


def coupling_cfg(T=0.02):
    return CouplingConfig(T=T, delta_cap=T / 10, merge_threshold=1e-4)


def test_config_validation():
    with pytest.raises(ValueError):
        CouplingConfig(T=1.0, delta_cap=2.0, merge_threshold=1e-3)
    with pytest.raises(ValueError):
        CouplingConfig(T=1.0, delta_cap=0.1, merge_threshold=0.0)


def test_identical_initial_data_trivial():
    phi, x, _, _ = make_pair()
    k = KernelSpec.sine(0.5)
    res = run_coupled_pair(phi, x, phi, x, k, coupling_cfg(), solver_cfg(),
                           seed=SeedSpec(1))
    assert res.coupled
    assert np.all(res.distance_path[:, 1] == 0.0)
    assert np.all(res.distance_path[:, 2] == 0.0)
    assert girsanov_log_density(res) == 0.0
    assert res.ledger.density() == 1.0


def test_pathwise_contraction_bound():
    """Frozen pair: distances sit below the (T-t)/T envelope at every step."""
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    T = 0.02
    for seed in range(3):
        res = run_coupled_pair(phi, x, psi, y, k, coupling_cfg(T),
                               solver_cfg(T), seed=SeedSpec(40 + seed))
        d = res.distance_path
        envelope = (T - d[:, 0]) / T
        assert np.all(d[:, 1] <= d[0, 1] * envelope + 1e-12)
        assert np.all(d[:, 2] <= d[0, 2] * envelope + 1e-12)
        assert res.merge_time is not None and res.merge_time <= T


def test_integral_bound():
    # int ||g - g~||^2 / xi^2 dt <= ||phi - psi||^2 / T pathwise
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    T = 0.02
    res = run_coupled_pair(phi, x, psi, y, k, coupling_cfg(T), solver_cfg(T),
                           seed=SeedSpec(3))
    d = res.distance_path
    dt = res.solver_config.dt
    xi = T - d[:-1, 0]
    integral = float(np.sum(dt * d[:-1, 1] ** 2 / xi**2))
    assert integral <= d[0, 1] ** 2 / T * 1.05


def test_merged_paths_glue_exactly():
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    ccfg = CouplingConfig(T=0.02, delta_cap=0.002, merge_threshold=0.05)
    res = run_coupled_pair(phi, x, psi, y, k, ccfg, solver_cfg(),
                           seed=SeedSpec(4))
    s = res.info["g_merge_step"]
    assert s > 0
    assert np.array_equal(res.g_tilde_path[s:], res.g_path[s:])


def test_projected_mode_observes_contraction():
    # the bound is asserted in penalised mode; projected runs track it too
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    T = 0.02
    res = run_coupled_pair(phi, x, psi, y, k, coupling_cfg(T),
                           solver_cfg(T, mode="projected"), seed=SeedSpec(5))
    d = res.distance_path
    assert np.all(d[:, 1] <= d[0, 1] * (T - d[:, 0]) / T + 1e-12)


def test_live_mode_couples():
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    res = run_coupled_pair(phi, x, psi, y, k, coupling_cfg(), solver_cfg(),
                           seed=SeedSpec(6), frozen=False)
    assert res.coupled
    assert res.distance_path[-1, 1] == 0.0
    assert np.isfinite(res.ledger.log_density())


def test_ledger_partial_interval():
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    res = run_coupled_pair(phi, x, psi, y, k, coupling_cfg(), solver_cfg(),
                           seed=SeedSpec(7))
    full = res.ledger.log_density()
    n = len(res.ledger.field_integral)
    split = math.fsum(
        [res.ledger.log_density(0, n // 2), res.ledger.log_density(n // 2, n)]
    )
    assert abs(full - split) < 1e-12


def test_girsanov_mean_one_small_sample():
    phi, x, psi, y = make_pair(n=8, a=0.125, dm=0.125)
    k = KernelSpec.sine(0.5)
    T = 0.05
    scfg = SolverConfig(dt=2.5e-3, n_steps=20, mode="penalised", epsilon=1e-4)
    ccfg = CouplingConfig(T=T, delta_cap=T / 10, merge_threshold=1e-4)
    R = 400
    dens = np.empty(R)
    for r in range(R):
        res = run_coupled_pair(phi, x, psi, y, k, ccfg, scfg,
                               seed=SeedSpec(70, stream_id=r))
        dens[r] = res.ledger.density()
    se = dens.std(ddof=1) / math.sqrt(R)
    assert abs(dens.mean() - 1.0) < 4 * se, (dens.mean(), se)


def test_tv_bound_properties():
    phi, x, psi, y = make_pair(n=16, a=0.125, dm=0.125)
    k = KernelSpec.sine(0.5)
    T = 0.05
    scfg = SolverConfig(dt=2.5e-3, n_steps=20, mode="penalised", epsilon=1e-4)
    ccfg = CouplingConfig(T=T, delta_cap=T / 10, merge_threshold=1e-4)
    bound = tv_bound_estimate(phi, x, psi, y, k, (ccfg, scfg), SeedSpec(8), 20)
    assert bound > 0.0
    zero = tv_bound_estimate(phi, x, phi, x, k, (ccfg, scfg), SeedSpec(8), 5)
    assert zero == 0.0
    # the Pinsker bound dominates the direct gap of a ||F||_inf <= 1 functional
    est = strong_feller_probe(
        lambda g, M: math.tanh(M), phi, x, psi, y, k,
        SolverConfig(dt=2.5e-3, n_steps=20), SeedSpec(9), 50,
    )
    assert bound >= est.estimate - 3 * est.mc_stderr


def test_feller_trivial_cases():
    phi, x, psi, y = make_pair(n=16)
    k = KernelSpec.sine(0.5)
    scfg = SolverConfig(dt=1e-3, n_steps=20)
    one = strong_feller_probe(lambda g, M: 1.0, phi, x, psi, y, k, scfg,
                              SeedSpec(10), 10)
    assert one.estimate == 0.0
    same = strong_feller_probe(lambda g, M: math.tanh(M), phi, x, phi, x, k,
                               scfg, SeedSpec(11), 10)
    assert same.estimate == 0.0
    assert same.input_distance_d12 == 0.0


def test_horizon_mismatch_rejected():
    phi, x, psi, y = make_pair()
    k = KernelSpec.sine(0.5)
    with pytest.raises(ConfigError):
        run_coupled_pair(phi, x, psi, y, k, coupling_cfg(T=0.05),
                         solver_cfg(T=0.02), seed=SeedSpec(0))


def test_markov_replica_floor():
    phi, x, _, _ = make_pair(n=8)
    k = KernelSpec.sine(0.5)
    scfg = SolverConfig(dt=1e-3, n_steps=10)
    with pytest.raises(ValueError):
        markov_shift_test(phi, x, 0.01, 0.01, k, scfg,
                          (SeedSpec(0), SeedSpec(1)), replicas=10)
