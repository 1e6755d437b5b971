"""Geometry layer: fields, quantile maps, reconstruction, circular W2."""

import numpy as np
import pytest
from scipy.optimize import linprog

from torusflow.torus import (
    EquivariantMap,
    GridSpec,
    MeasureH1,
    PeriodicField,
    TorusMeasure,
    circular_wasserstein,
    d12_metric,
    equivariant_l2_distance,
    pushforward_measure,
    quantile_from_atoms,
    reconstruct_A,
    torus_distance,
)


def lp_circular_w2(mu, nu):
    """Exact Kantorovich LP on atomic measures with circular quadratic cost."""
    xs, ws = mu.as_atoms()
    ys, vs = nu.as_atoms()
    nx, ny = len(xs), len(ys)
    cost = torus_distance(xs[:, None], ys[None, :]) ** 2
    A_eq = []
    b_eq = []
    for i in range(nx):
        row = np.zeros((nx, ny))
        row[i, :] = 1.0
        A_eq.append(row.ravel())
        b_eq.append(ws[i])
    for j in range(ny):
        row = np.zeros((nx, ny))
        row[:, j] = 1.0
        A_eq.append(row.ravel())
        b_eq.append(vs[j])
    res = linprog(cost.ravel(), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    assert res.success
    return float(np.sqrt(max(res.fun, 0.0)))


class TestGridAndField:
    def test_grid_validation(self):
        with pytest.raises(ValueError):
            GridSpec(1)

    def test_spacing_and_nodes(self):
        g = GridSpec(8)
        assert g.spacing == 0.125
        assert np.allclose(g.nodes, np.arange(8) / 8)

    def test_field_norms(self):
        g = GridSpec(64)
        f = PeriodicField(g, np.cos(2 * np.pi * g.nodes))
        assert abs(f.mean()) < 1e-14
        assert abs(f.l2_norm() - np.sqrt(0.5)) < 1e-14
        assert abs(f.sup_norm() - 1.0) < 1e-12

    def test_field_csv_roundtrip(self, tmp_path):
        g = GridSpec(16)
        f = PeriodicField(g, np.sin(2 * np.pi * g.nodes) + 0.3)
        p = tmp_path / "f.csv"
        f.to_csv(p)
        f2 = PeriodicField.from_csv(p)
        assert np.array_equal(f.values, f2.values)

    def test_grid_mismatch(self):
        f = PeriodicField(GridSpec(8), np.ones(8))
        h = PeriodicField(GridSpec(16), np.ones(16))
        with pytest.raises(ValueError):
            f + h


class TestReconstruction:
    def test_mean_identity(self):
        # <A([g, M])> = M must hold exactly, not just to scheme order
        rng = np.random.default_rng(1)
        g = GridSpec(128)
        for _ in range(50):
            vals = rng.uniform(0.0, 2.0, g.n_cells)
            M = rng.normal()
            A = reconstruct_A(PeriodicField(g, vals), M)
            assert abs(A.mean() - M) < 1e-12

    def test_winding_is_total_mass(self):
        g = GridSpec(64)
        vals = 1.0 + 0.5 * np.sin(2 * np.pi * g.nodes)
        A = reconstruct_A(PeriodicField(g, vals), 0.0)
        assert abs(A.winding - np.mean(vals)) < 1e-14

    def test_identity_map(self):
        g = GridSpec(32)
        A = reconstruct_A(PeriodicField(g, np.ones(32)), 0.5)
        # derivative one, mean 0.5: A(u) = u - 1/2 + 1/2 = u
        assert np.allclose(A.values, g.nodes, atol=1e-13)

    def test_lipschitz_in_state(self):
        """sup |A1 - A2| <= ||g1 - g2||_L2 + |M1 - M2|."""
        rng = np.random.default_rng(7)
        g = GridSpec(64)
        for _ in range(200):
            v1 = rng.uniform(0, 3, g.n_cells)
            v2 = rng.uniform(0, 3, g.n_cells)
            m1, m2 = rng.normal(size=2)
            A1 = reconstruct_A(PeriodicField(g, v1), m1)
            A2 = reconstruct_A(PeriodicField(g, v2), m2)
            lhs = np.max(np.abs(A1.values - A2.values))
            rhs = np.sqrt(np.mean((v1 - v2) ** 2)) + abs(m1 - m2)
            assert lhs <= rhs + 1e-12


class TestEquivariantMap:
    def test_monotone(self):
        g = GridSpec(16)
        F = EquivariantMap(g, g.nodes, 1.0)
        assert F.is_monotone()
        G = EquivariantMap(g, -g.nodes, 1.0)
        assert not G.is_monotone()

    def test_shift_distance_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        g = GridSpec(32)
        for _ in range(50):
            F = EquivariantMap(g, rng.normal(0, 2, 32), 1.0)
            G = EquivariantMap(g, rng.normal(0, 2, 32), 1.0)
            got = equivariant_l2_distance(F, G)
            brute = min(
                np.sqrt(np.mean((F.values - G.values + s) ** 2))
                for s in range(-10, 11)
            )
            assert abs(got - brute) < 1e-12

    def test_shift_invariance(self):
        g = GridSpec(16)
        F = EquivariantMap(g, g.nodes, 1.0)
        G = EquivariantMap(g, g.nodes + 3.0, 1.0)
        assert equivariant_l2_distance(F, G) < 1e-12


class TestPushforward:
    def test_uniform(self):
        g = GridSpec(32)
        F = EquivariantMap(g, g.nodes, 1.0)
        mu = pushforward_measure(F)
        assert np.allclose(mu.histogram, 1.0 / 32)

    def test_rotation_invariance_of_mass(self):
        g = GridSpec(64)
        F = EquivariantMap(g, g.nodes + 0.37, 1.0)
        mu = pushforward_measure(F)
        assert abs(mu.histogram.sum() - 1.0) < 1e-12

    def test_quantile_from_atoms_equivariance(self):
        mu = TorusMeasure(atoms=[0.1, 0.5, 0.9], weights=[0.2, 0.3, 0.5])
        F = quantile_from_atoms(mu, GridSpec(64))
        assert F.winding == 1.0
        assert F.is_monotone()


class TestCircularWasserstein:
    def test_identical(self):
        mu = TorusMeasure(atoms=[0.2, 0.7])
        assert circular_wasserstein(mu, mu) < 1e-12

    def test_point_masses(self):
        mu = TorusMeasure(atoms=[0.1])
        nu = TorusMeasure(atoms=[0.9])
        # wraps around: distance 0.2, not 0.8
        assert abs(circular_wasserstein(mu, nu) - 0.2) < 1e-9

    def test_cut_matters(self):
        # fixed cut at 0 badly overestimates for this pair
        mu = TorusMeasure(atoms=[0.01, 0.51])
        nu = TorusMeasure(atoms=[0.99, 0.49])
        fixed = circular_wasserstein(mu, nu, minimize_cut=False)
        best = circular_wasserstein(mu, nu)
        assert best < 0.021
        assert fixed > best

    def test_against_lp(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            na, nb = rng.integers(1, 9, size=2)
            mu = _random_atoms(rng, na)
            nu = _random_atoms(rng, nb)
            got = circular_wasserstein(mu, nu)
            want = lp_circular_w2(mu, nu)
            assert abs(got - want) < 1e-6, (got, want)


def _random_atoms(rng, k):
    w = rng.random(k) + 0.05
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return TorusMeasure(atoms=rng.random(k), weights=w)


class TestD12:
    def test_metric_matches_state_distance(self):
        # the measure-level metric equals |M1-M2| + ||g1-g2||_L2
        g = GridSpec(32)
        rng = np.random.default_rng(5)
        g1 = PeriodicField(g, rng.uniform(0, 2, 32))
        g2 = PeriodicField(g, rng.uniform(0, 2, 32))
        d = d12_metric(MeasureH1(0.3, g1), MeasureH1(-0.2, g2))
        want = 0.5 + np.sqrt(np.mean((g1.values - g2.values) ** 2))
        assert abs(d - want) < 1e-14

    def test_nonnegative_derivative_enforced(self):
        g = GridSpec(8)
        with pytest.raises(ValueError):
            MeasureH1(0.0, PeriodicField(g, -np.ones(8)))


def test_torus_distance_basic():
    assert torus_distance(0.1, 0.9) == pytest.approx(0.2)
    assert torus_distance(0.25, 0.75) == pytest.approx(0.5)
    assert np.all(torus_distance(np.array([0.0, 0.5]), 0.0) == [0.0, 0.5])


def test_measure_mass_validation():
    with pytest.raises(ValueError):
        TorusMeasure(atoms=[0.1, 0.2], weights=[0.5, 0.6])
