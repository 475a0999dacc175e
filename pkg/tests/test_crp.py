import numpy as np
import pytest
from scipy import stats

from cthedge.crp import CrpSampleSet, crp_log_paths, crp_spec, read_crp_csv, sample_simplex, write_crp_csv
from cthedge.diagnostics import diagnose
from cthedge.engine import run
from cthedge.errors import DomainError
from cthedge.market import DiffusionSpec, PathSet, SimGrid, simulate


def linear_paths(cols, steps=5, dt=0.2):
    t = np.arange(steps + 1) * dt
    X = np.column_stack([f(t) for f in cols])
    return PathSet(t, X, np.diff(X, axis=0))


class TestSampleSimplex:
    def test_rows_on_simplex(self):
        s = sample_simplex(200, 4, seed=1)
        assert s.weights.shape == (204, 4) and s.size == 204 and s.d == 4
        assert np.all(s.weights >= 0)
        assert np.abs(s.weights.sum(axis=1) - 1).max() <= 1e-12

    def test_vertices_appended(self):
        s = sample_simplex(10, 3, seed=0)
        np.testing.assert_array_equal(s.weights[-3:], np.eye(3))

    def test_deterministic(self):
        assert sample_simplex(50, 3, 9).weights.tobytes() == sample_simplex(50, 3, 9).weights.tobytes()

    def test_uniform_marginal_for_two_instruments(self):
        s = sample_simplex(100_000, 2, seed=4)
        ks = stats.kstest(s.weights[:-2, 0], "uniform").statistic
        assert ks < 0.02

    @pytest.mark.parametrize("m, d", [(0, 3), (5, 1)])
    def test_invalid(self, m, d):
        with pytest.raises(DomainError):
            sample_simplex(m, d)

    def test_csv_round_trip(self, tmp_path):
        s = sample_simplex(7, 3, seed=2)
        write_crp_csv(tmp_path / "w.csv", s)
        back = read_crp_csv(tmp_path / "w.csv")
        assert back.m == 7 and back.weights.tobytes() == s.weights.tobytes()


class TestCrpPaths:
    def test_vertex_matches_base(self):
        base = simulate(DiffusionSpec.independent(3), SimGrid(1.0, 0.01), seed=1)
        s = sample_simplex(5, 3, seed=0)
        out = crp_log_paths(base, s)
        np.testing.assert_allclose(out.X[:, -3:], base.X, atol=1e-14)
        np.testing.assert_array_equal(out.X[0], 0.0)

    def test_uniform_cancels(self):
        base = linear_paths([lambda t: t, lambda t: -t])
        out = crp_log_paths(base, CrpSampleSet(np.array([[0.5, 0.5]]), 1))
        np.testing.assert_allclose(out.X[:, 0], 0.0, atol=1e-15)

    def test_matches_dot_products(self):
        rng = np.random.default_rng(3)
        dX = rng.normal(size=(5, 3))
        X = np.vstack([np.zeros(3), np.cumsum(dX, axis=0)])
        base = PathSet(np.arange(6) * 0.1, X, dX)
        s = sample_simplex(4, 3, seed=5)
        out = crp_log_paths(base, s)
        for e, w in enumerate(s.weights):
            expected = [0.0]
            for k in range(5):
                expected.append(expected[-1] + sum(w[j] * (X[k + 1, j] - X[k, j]) for j in range(3)))
            np.testing.assert_allclose(out.X[:, e], expected, atol=1e-13)

    def test_linearity(self):
        base = simulate(DiffusionSpec.independent(3), SimGrid(1.0, 0.01), seed=6)
        rng = np.random.default_rng(0)
        u, v = rng.dirichlet(np.ones(3), 2)
        a = 0.3
        s = CrpSampleSet(np.vstack([u, v, a * u + (1 - a) * v]), 3)
        out = crp_log_paths(base, s)
        np.testing.assert_allclose(out.X[:, 2], a * out.X[:, 0] + (1 - a) * out.X[:, 1], atol=1e-12)

    def test_dimension_mismatch(self):
        base = simulate(DiffusionSpec.independent(2), SimGrid(1.0, 0.1))
        with pytest.raises(DomainError):
            crp_log_paths(base, sample_simplex(3, 3))

    def test_expanded_spec_rows(self):
        spec = DiffusionSpec.independent(3, sigma=[1.0, 2.0, 3.0], drift=[0.2, 0.0, -0.2])
        s = sample_simplex(3, 3, seed=1)
        ex = crp_spec(spec, s)
        np.testing.assert_allclose(ex.regimes[0].drift, s.weights @ [0.2, 0.0, -0.2])
        np.testing.assert_allclose(ex.regimes[0].diffusion, s.weights * [1.0, 2.0, 3.0])

    def test_quantile_bound_over_expanded_set(self):
        spec = DiffusionSpec.independent(3, drift=[0.2, 0.0, -0.2])
        s = sample_simplex(60, 3, seed=2)
        base = simulate(spec, SimGrid(1.0, 5e-3), seed=3)
        paths = crp_log_paths(base, s)
        traj = run(paths)
        d = diagnose(traj, crp_spec(spec, s), paths, [0.05, 0.2, 0.5])
        assert d.verdicts["quantile"].passed
        assert d.verdicts["vol_factor4"].passed
        assert d.verdicts["theorem2_analytic"].passed
