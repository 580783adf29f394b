import numpy as np
import pytest

from cylmart.martingales import (
    NoiseSpec,
    am_operator,
    countex_spec,
    load_ensemble,
    qm_empirical,
    qm_operator,
    qv_exact,
    qv_partition_estimate,
    save_ensemble,
    simulate,
    sphere_panel,
    stacked_spec,
    stopped_spec,
)
from cylmart.measures import TimeGrid
from cylmart.operators import op_norm_sym


@pytest.fixture
def grid():
    return TimeGrid.uniform(1.0, 16)


class TestSimulate:
    def test_brownian_variance(self, grid):
        d = 3
        spec = NoiseSpec(d, d, np.eye(d))
        ens = simulate(spec, grid, 10_000, seed=11)
        term = ens.m_evals[:, -1, :]  # coordinate evaluations
        var = term.var(axis=0, ddof=1)
        se = var * np.sqrt(2.0 / (ens.n_paths - 1))
        assert np.all(np.abs(var - 1.0) <= 3 * se)

    def test_zero_sigma(self, grid):
        spec = NoiseSpec(2, 2, np.zeros((2, 2)))
        ens = simulate(spec, grid, 16, seed=1)
        assert np.abs(ens.m_evals).max() == 0.0
        assert ens.bracket.prefix()[:, -1].max() == 0.0

    def test_scalar_scaled(self, grid):
        spec = NoiseSpec(1, 1, np.array([[2.0]]))
        ens = simulate(spec, grid, 10_000, seed=3)
        var = ens.m_evals[:, -1, 0].var(ddof=1)
        se = var * np.sqrt(2.0 / (ens.n_paths - 1))
        assert abs(var - 4.0) <= 3 * se

    def test_driver_covariance(self, grid):
        q = np.array([[2.0, 0.5], [0.5, 1.0]])
        spec = NoiseSpec(2, 2, np.eye(2), q_drive=q)
        ens = simulate(spec, grid, 20_000, seed=5)
        inc = ens.driver_increments.reshape(-1, 2)
        emp = inc.T @ inc / inc.shape[0]
        np.testing.assert_allclose(emp, q * grid.widths[0], rtol=0.05)

    def test_deterministic_in_seed_and_path_order(self, grid):
        spec = NoiseSpec(2, 2, np.eye(2))
        a = simulate(spec, grid, 8, seed=42)
        b = simulate(spec, grid, 8, seed=42)
        np.testing.assert_array_equal(a.driver_increments, b.driver_increments)
        # substreams keyed by path index: a smaller ensemble is a prefix
        c = simulate(spec, grid, 4, seed=42)
        np.testing.assert_array_equal(c.driver_increments, a.driver_increments[:4])

    def test_bad_inputs(self, grid):
        spec = NoiseSpec(2, 2, np.eye(2))
        with pytest.raises(ValueError, match="n_paths"):
            simulate(spec, grid, 0, seed=1)
        with pytest.raises(ValueError, match="q_drive"):
            NoiseSpec(2, 2, np.eye(2), q_drive=np.eye(3))


class TestExactBracket:
    def test_identity_is_time(self, grid):
        spec = NoiseSpec(2, 2, np.eye(2))
        qv = qv_exact(spec, grid)
        np.testing.assert_array_equal(qv.prefix(), grid.points)

    def test_zero(self, grid):
        qv = qv_exact(NoiseSpec(2, 2, np.zeros((2, 2))), grid)
        assert qv.total_mass == 0.0

    def test_q_brownian_scaling(self, grid):
        # driver covariance 2I doubles the bracket of the identity map
        spec = NoiseSpec(2, 2, np.eye(2), q_drive=2.0 * np.eye(2))
        qv = qv_exact(spec, grid)
        np.testing.assert_allclose(qv.total_mass, 2.0)

    def test_general_matrix(self, grid):
        sig = np.array([[1.0, 2.0], [0.0, 1.0]])
        qv = qv_exact(NoiseSpec(2, 2, sig), grid)
        np.testing.assert_allclose(qv.total_mass, op_norm_sym(sig @ sig.T))

    def test_triangle_inequality_for_independent_sum(self, grid):
        rng = np.random.default_rng(0)
        for _ in range(20):
            s1 = NoiseSpec(3, 2, rng.standard_normal((3, 2)))
            s2 = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
            both = stacked_spec(s1, s2)
            t = np.sqrt(qv_exact(both, grid).prefix())
            t1 = np.sqrt(qv_exact(s1, grid).prefix())
            t2 = np.sqrt(qv_exact(s2, grid).prefix())
            assert np.all(t <= t1 + t2 + 1e-12)

    def test_stopping_commutes(self, grid):
        rng = np.random.default_rng(1)
        spec = NoiseSpec(2, 2, rng.standard_normal((2, 2)))
        stop = 7
        stopped = stopped_spec(spec, grid, stop)
        qv_stop = qv_exact(stopped, grid)
        qv_full = qv_exact(spec, grid)
        np.testing.assert_array_equal(
            qv_stop.increments[:stop], qv_full.increments[:stop]
        )
        assert np.abs(qv_stop.increments[stop:]).max() == 0.0

    def test_per_direction_bound(self, grid):
        rng = np.random.default_rng(2)
        spec = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
        ens = simulate(spec, grid, 4, seed=9)
        dirs = rng.standard_normal((32, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        per_dir = ens.direction_bracket_increments(dirs)  # (32, K)
        assert np.all(per_dir <= ens.bracket.increments[0][None, :] + 1e-12)


class TestOperatorBracket:
    def test_identity(self, grid):
        am = am_operator(NoiseSpec(2, 2, np.eye(2)), grid)
        np.testing.assert_allclose(
            am.matrices, grid.points[:, None, None] * np.eye(2), atol=1e-15
        )

    def test_diagonal(self, grid):
        am = am_operator(NoiseSpec(2, 2, np.diag([1.0, 2.0])), grid)
        np.testing.assert_allclose(
            am.matrices[-1], np.diag([1.0, 4.0]), atol=1e-14
        )

    def test_zero(self, grid):
        am = am_operator(NoiseSpec(2, 2, np.zeros((2, 2))), grid)
        assert np.abs(am.matrices).max() == 0.0

    def test_dominated_by_scalar_bracket(self, grid):
        rng = np.random.default_rng(3)
        spec = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
        am = am_operator(spec, grid)
        qv = qv_exact(spec, grid).prefix()
        xs = rng.standard_normal((16, 3))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        quad = np.einsum("xi,kij,xj->kx", xs, am.matrices, xs)
        assert np.all(quad <= qv[:, None] + 1e-12)


class TestOperatorDensity:
    def test_scaling_invariance(self, grid):
        qm1 = qm_operator(NoiseSpec(2, 2, np.eye(2)), grid)
        qm2 = qm_operator(NoiseSpec(2, 2, 5.0 * np.eye(2)), grid)
        np.testing.assert_allclose(qm1.matrices, qm2.matrices, atol=1e-14)
        np.testing.assert_allclose(qm1.matrices[0], np.eye(2), atol=1e-15)

    def test_diagonal_normalization(self, grid):
        qm = qm_operator(NoiseSpec(2, 2, np.diag([1.0, 2.0])), grid)
        np.testing.assert_allclose(qm.matrices[0], np.diag([0.25, 1.0]), atol=1e-15)

    def test_zero_cells_give_zero_matrix(self):
        grid = TimeGrid.uniform(1.0, 4)
        sig = np.zeros((4, 2, 2))
        sig[:2] = np.eye(2)
        qm = qm_operator(NoiseSpec(2, 2, sig), grid)
        assert np.abs(qm.matrices[2:]).max() == 0.0

    def test_unit_norm_on_support(self, grid):
        rng = np.random.default_rng(4)
        for _ in range(25):
            spec = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
            qm = qm_operator(spec, grid)
            norms = np.abs(np.linalg.eigvalsh(qm.matrices)).max(axis=-1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_empirical_matches_exact(self, grid):
        rng = np.random.default_rng(5)
        spec = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
        exact = qm_operator(spec, grid)
        emp = qm_empirical(am_operator(spec, grid), qv_exact(spec, grid))
        assert np.abs(exact.matrices - emp.matrices).max() < 1e-10


class TestPartitionEstimate:
    def test_scalar_equals_direction_bracket(self, grid):
        spec = NoiseSpec(1, 1, np.array([[1.5]]))
        ens = simulate(spec, grid, 4, seed=1)
        est = qv_partition_estimate(ens, 8, [0, 2, 4])
        exact = qv_exact(spec, grid)
        for d in range(3):
            np.testing.assert_allclose(
                est.values[0, d], exact.prefix(), rtol=1e-12
            )

    def test_constant_diagonal_exact_at_any_depth(self, grid):
        spec = NoiseSpec(2, 2, np.diag([0.5, 1.5]))
        ens = simulate(spec, grid, 2, seed=2)
        est = qv_partition_estimate(ens, 16, [0, 3])
        np.testing.assert_allclose(est.terminal()[0], 2.25, rtol=1e-12)

    def test_piecewise_needs_refinement(self):
        grid = TimeGrid.uniform(1.0, 8)
        sig = np.zeros((8, 2, 2))
        sig[:4, 0, 0] = 1.0
        sig[4:, 1, 1] = 1.0
        ens = simulate(NoiseSpec(2, 2, sig), grid, 2, seed=3)
        est = qv_partition_estimate(ens, 8, [0, 1, 2])
        terms = est.terminal()[0]
        assert terms[0] == pytest.approx(0.5)  # one block underestimates
        assert terms[1] == pytest.approx(1.0)  # split at 1/2 is exact
        assert np.all(np.diff(terms) >= -1e-15)

    def test_monotone_in_panel_size(self, grid):
        rng = np.random.default_rng(6)
        spec = NoiseSpec(3, 3, rng.standard_normal((3, 3)))
        ens = simulate(spec, grid, 2, seed=4)
        small = qv_partition_estimate(ens, 4, [3], panel_seed=77)
        big = qv_partition_estimate(ens, 64, [3], panel_seed=77)
        assert big.terminal()[0, 0] >= small.terminal()[0, 0] - 1e-15

    def test_increasing_paths(self, grid):
        rng = np.random.default_rng(7)
        spec = NoiseSpec(2, 2, rng.standard_normal((2, 2)))
        ens = simulate(spec, grid, 2, seed=5)
        est = qv_partition_estimate(ens, 16, [0, 1, 2, 3])
        assert np.all(np.diff(est.values, axis=-1) >= -1e-15)

    def test_empty_panel_rejected(self, grid):
        ens = simulate(NoiseSpec(2, 2, np.eye(2)), grid, 1, seed=6)
        with pytest.raises(ValueError, match="depth schedule"):
            qv_partition_estimate(ens, 8, [])


class TestSpherePanel:
    def test_contains_coordinates(self):
        panel = sphere_panel(3, 16, seed=0)
        assert panel.shape == (22, 3)
        np.testing.assert_allclose(np.linalg.norm(panel, axis=1), 1.0, rtol=1e-12)

    def test_one_dimensional(self):
        panel = sphere_panel(1, 50, seed=0)
        np.testing.assert_array_equal(np.sort(panel.ravel()), [-1.0, 1.0])


class TestCountex:
    @pytest.mark.parametrize("n", [4, 8, 16, 32])
    def test_bracket_grows_linearly(self, n):
        spec, grid = countex_spec(n)
        assert qv_exact(spec, grid).total_mass == float(n)

    def test_directions_stay_bounded(self):
        spec, grid = countex_spec(8)
        ens = simulate(spec, grid, 1, seed=0)
        per_dir = ens.direction_bracket_increments(np.eye(8)).sum(axis=-1)
        np.testing.assert_allclose(per_dir, 1.0, atol=1e-12)

    def test_finer_cells(self):
        spec, grid = countex_spec(4, cells_per_block=4)
        assert grid.n_cells == 16
        assert qv_exact(spec, grid).total_mass == 4.0


class TestAdaptedSigma:
    @staticmethod
    def _vol(i, t, w_prev):
        s = w_prev.sum(axis=(-2, -1)) if w_prev.shape[-2] else np.zeros(w_prev.shape[:-2])
        return (1.0 + 0.5 * np.tanh(s) ** 2)[..., None, None]

    def test_per_path_bracket(self, grid):
        spec = NoiseSpec(1, 1, self._vol)
        ens = simulate(spec, grid, 8, seed=10)
        assert ens.sigma_path.shape == (8, 16, 1, 1)
        assert not np.allclose(
            ens.bracket.increments[0], ens.bracket.increments[1]
        )
        # bracket rebuilt from the realized sigma matches
        manual = (ens.sigma_path[..., 0, 0] ** 2) * grid.widths
        np.testing.assert_allclose(ens.bracket.increments, manual, rtol=1e-12)

    def test_adapted_reads_only_past(self, grid):
        # two drivers differing only in the last cell share all sigma values
        spec = NoiseSpec(1, 1, self._vol)
        ens = simulate(spec, grid, 2, seed=11)
        dw = ens.driver_increments.copy()
        dw[:, -1, :] *= -1.0
        other = spec.sigma_along(grid, dw)
        np.testing.assert_array_equal(other, ens.sigma_path)


class TestBundle:
    def test_roundtrip(self, tmp_path, grid):
        rng = np.random.default_rng(8)
        spec = NoiseSpec(2, 3, rng.standard_normal((2, 3)))
        ens = simulate(spec, grid, 5, seed=21)
        save_ensemble(ens, tmp_path / "bundle")
        back = load_ensemble(tmp_path / "bundle")
        np.testing.assert_allclose(back.driver_increments, ens.driver_increments)
        np.testing.assert_allclose(back.m_evals, ens.m_evals)
        np.testing.assert_allclose(back.bracket.increments, ens.bracket.increments)

    def test_partial_bundle_errors(self, tmp_path, grid):
        spec = NoiseSpec(1, 1, np.eye(1))
        ens = simulate(spec, grid, 3, seed=22)
        save_ensemble(ens, tmp_path / "b")
        (tmp_path / "b" / "path_00001.csv").unlink()
        with pytest.raises(FileNotFoundError, match="path_00001"):
            load_ensemble(tmp_path / "b")
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_ensemble(tmp_path / "nowhere")


class TestScalarVsOperatorBracket:
    def test_bracket_below_trace_bracket(self):
        # the vector path's summed coordinate brackets (trace route) dominate
        # the operator-norm bracket; no sharper relation is asserted
        rng = np.random.default_rng(30)
        grid = TimeGrid.uniform(1.0, 16)
        for _ in range(20):
            d = int(rng.integers(1, 6))
            spec = NoiseSpec(d, d, rng.standard_normal((d, d)))
            a = np.asarray(spec.sigma) @ np.asarray(spec.sigma).T
            trace_total = np.trace(a) * 1.0
            assert qv_exact(spec, grid).total_mass <= trace_total + 1e-12
