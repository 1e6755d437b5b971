"""Coupled reflected solver: validation, invariants, convergence behaviour."""

import numpy as np
import pytest

from torusflow.baseline import evolve_quantile
from torusflow.interaction import KernelSpec
from torusflow.noise import SeedSpec, sample_increments
from torusflow.spde import (
    ConfigError,
    SolverConfig,
    check_solution,
    picard_solve,
    simulate,
)
from torusflow.torus import EquivariantMap, GridSpec, PeriodicField, reconstruct_A


@pytest.fixture
def grid():
    return GridSpec(32)


@pytest.fixture
def kernel():
    return KernelSpec.sine(0.5)


def bump(grid, a=0.5):
    return PeriodicField(grid, 1.0 + a * np.cos(2 * np.pi * grid.nodes))


class TestValidation:
    def test_bad_mode(self, grid):
        with pytest.raises(ConfigError):
            SolverConfig(dt=1e-3, n_steps=10, mode="exact").validate(grid)

    def test_explicit_stability_rule(self, grid):
        cfg = SolverConfig(dt=1e-3, n_steps=10, heat_scheme="explicit")
        with pytest.raises(ConfigError):
            cfg.validate(grid)  # dt > spacing^2 / 4 = 2.44e-4
        ok = SolverConfig(dt=2e-4, n_steps=10, heat_scheme="explicit")
        ok.validate(grid)

    def test_negative_initial_profile(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=5)
        phi = PeriodicField(grid, -np.ones(grid.n_cells))
        with pytest.raises(ConfigError):
            simulate(phi, 0.0, kernel, cfg, seed=SeedSpec(0))

    def test_needs_seed_or_noise(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=5)
        with pytest.raises(ConfigError):
            simulate(bump(grid), 0.0, kernel, cfg)

    def test_t0_must_align(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=5)
        with pytest.raises(ConfigError):
            simulate(bump(grid), 0.0, kernel, cfg, seed=SeedSpec(0), t0=1.5e-3)


class TestProjectedRun:
    def test_nonnegative_and_complementary(self, grid, kernel):
        cfg = SolverConfig(dt=5e-4, n_steps=100)
        traj = simulate(bump(grid), 0.0, kernel, cfg, seed=SeedSpec(12))
        assert traj.g_path.min() >= 0.0
        assert traj.ledger.increments.min() >= 0.0
        # reflection only pushes where the state ends up at zero
        touched = traj.ledger.increments > 0
        assert np.all(traj.g_path[1:][touched] == 0.0)

    def test_determinism(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=20)
        a = simulate(bump(grid), 0.1, kernel, cfg, seed=SeedSpec(5))
        b = simulate(bump(grid), 0.1, kernel, cfg, seed=SeedSpec(5))
        assert np.array_equal(a.g_path, b.g_path)
        assert np.array_equal(a.M_path, b.M_path)

    def test_time_offset_slices_noise(self, grid, kernel):
        """A run started at t0 = s sees the tail of the time-0 noise stream."""
        dt = 1e-3
        seed = SeedSpec(7)
        full = sample_increments(grid, dt, 30, seed)
        cfg = SolverConfig(dt=dt, n_steps=20)
        shifted = simulate(bump(grid), 0.0, kernel, cfg, seed=seed, t0=10 * dt)
        assert np.array_equal(shifted.noise.dW, full.dW[:, 10:])
        assert np.array_equal(shifted.noise.dB, full.dB[10:])
        assert shifted.times[0] == pytest.approx(10 * dt)

    def test_state_accessors(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=4)
        traj = simulate(bump(grid), 0.3, kernel, cfg, seed=SeedSpec(1))
        st = traj.final_state
        assert st.t == pytest.approx(4e-3)
        mu = st.measure()
        assert abs(mu.histogram.sum() - 1.0) < 1e-12


class TestWeakForm:
    def test_residual_first_order(self, kernel):
        """Defect of the weak identity halves with dt (shared refined noise)."""
        grid = GridSpec(32)
        phi0 = bump(grid, 0.8)
        tests = [
            PeriodicField(grid, np.cos(2 * np.pi * grid.nodes)),
            PeriodicField(grid, np.sin(4 * np.pi * grid.nodes)),
        ]
        dt_fine = 2.5e-4
        n_fine = 320
        fine = sample_increments(grid, dt_fine, n_fine, SeedSpec(33))
        res = []
        for level in (2, 1, 0):
            f = 2**level  # coarsening factor relative to the fine grid
            dW = fine.dW.reshape(grid.n_cells, n_fine // f, f).sum(axis=2)
            dB = fine.dB.reshape(n_fine // f, f).sum(axis=1)
            from torusflow.noise import NoiseIncrement

            cfg = SolverConfig(dt=dt_fine * f, n_steps=n_fine // f)
            traj = simulate(phi0, 0.0, kernel, cfg,
                            noise=NoiseIncrement(dW=dW, dB=dB))
            res.append(check_solution(traj, kernel, tests)["max_residual"])
        order = np.log2(res[0] / res[2]) / 2.0
        assert order > 0.8, (res, order)

    def test_complementarity_defect_zero(self, grid, kernel):
        cfg = SolverConfig(dt=5e-4, n_steps=80)
        traj = simulate(bump(grid, 0.9), 0.0, kernel, cfg, seed=SeedSpec(2))
        out = check_solution(traj, kernel, [])
        assert out["eta_mass"] > 0.0
        assert out["complementarity_defect"] == 0.0


class TestPenalisation:
    def test_epsilon_sweep_monotone(self, grid, kernel):
        """Penalised runs approach the projected one as eps decreases."""
        cfg_proj = SolverConfig(dt=1e-3, n_steps=50, mode="projected")
        seed = SeedSpec(9)
        ref = simulate(bump(grid, 0.95), 0.0, kernel, cfg_proj, seed=seed)
        gaps = []
        for eps in (1e-2, 1e-3, 1e-4, 1e-5):
            cfg = SolverConfig(dt=1e-3, n_steps=50, mode="penalised", epsilon=eps)
            pen = simulate(bump(grid, 0.95), 0.0, kernel, cfg, seed=seed)
            gaps.append(np.abs(pen.g_path - ref.g_path).max())
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:])), gaps
        assert gaps[-1] < 1e-3

    def test_penalised_allows_small_negativity(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=50, mode="penalised", epsilon=1e-4)
        traj = simulate(bump(grid, 0.95), 0.0, kernel, cfg, seed=SeedSpec(9))
        assert traj.g_path.min() < 0.0
        assert traj.g_path.min() > -0.05


class TestPicard:
    def test_contracts_geometrically(self, kernel):
        grid = GridSpec(32)
        cfg = SolverConfig(dt=2e-3, n_steps=50)  # T = 0.1
        traj = picard_solve(bump(grid), 0.0, kernel, cfg, seed=SeedSpec(4),
                            n_iter=6)
        d = traj.info["picard_distances"]
        # after the first correction the sweep map is a contraction
        ratios = [b / a for a, b in zip(d[1:], d[2:]) if a > 1e-15]
        assert all(r < 0.7 for r in ratios), d

    def test_matches_direct_solver_to_scheme_order(self, kernel):
        grid = GridSpec(32)
        cfg = SolverConfig(dt=1e-3, n_steps=40)
        seed = SeedSpec(14)
        a = picard_solve(bump(grid), 0.1, kernel, cfg, seed=seed, n_iter=8)
        b = simulate(bump(grid), 0.1, kernel, cfg, seed=seed)
        gap = np.abs(a.g_path[-1] - b.g_path[-1]).max()
        assert gap < 0.05, gap

    def test_rejects_penalised_mode(self, grid, kernel):
        cfg = SolverConfig(dt=1e-3, n_steps=5, mode="penalised")
        with pytest.raises(ConfigError):
            picard_solve(bump(grid), 0.0, kernel, cfg, seed=SeedSpec(0))


class TestZeroNoiseLimit:
    def test_transport_limit_matches_quantile_ode(self):
        """noise_scale = 0 without diffusion reduces to the quantile ODE."""
        grid = GridSpec(64)
        kernel = KernelSpec.sine(1.0)
        phi = bump(grid, 0.5)
        M0 = 0.2
        T, dt = 0.1, 1e-3
        cfg = SolverConfig(dt=dt, n_steps=int(T / dt), noise_scale=0.0,
                           laplacian=False)
        traj = simulate(phi, M0, kernel, cfg, seed=SeedSpec(0))
        F0 = reconstruct_A(phi, M0)
        FT = evolve_quantile(
            EquivariantMap(grid, F0.values, F0.winding), kernel, T, dt
        )
        # compare derivatives: central difference of F_T vs the evolved g
        ext = np.concatenate([[FT.values[-1] - FT.winding], FT.values,
                              [FT.values[0] + FT.winding]])
        deriv = (ext[2:] - ext[:-2]) / (2 * grid.spacing)
        err = np.abs(traj.g_path[-1] - deriv).max()
        assert err < 5.0 * (dt + grid.spacing**2), err
        assert traj.ledger.total_mass() == 0.0
