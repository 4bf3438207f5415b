import numpy as np
import pytest
import scipy.linalg

from jkiv import (
    SimulationSpec,
    expand_regime,
    first_stage_f,
    fstat_demo,
    gen_base_instruments,
    gen_dgp,
    laplace_sample,
    local_power_index,
    oracle_noncentrality,
    power_curve,
    size_experiment,
    strength_factor,
)
from jkiv.sim import _pairwise_products, _toeplitz_cholesky
from jkiv.streams import child_rng


class TestLaplace:
    def test_moments(self):
        rng = np.random.default_rng(0)
        draws = laplace_sample(rng, 1_000_000)
        assert abs(draws.mean()) < 0.005
        assert 1.99 < draws.var() < 2.01

    def test_tail_probability(self):
        rng = np.random.default_rng(1)
        n = 1_000_000
        draws = laplace_sample(rng, n)
        target = np.exp(-2.0)
        p_hat = np.mean(np.abs(draws) > 2.0)
        se = np.sqrt(target * (1 - target) / n)
        assert abs(p_hat - target) < 3 * se


class TestBaseInstruments:
    def test_covariance_entries(self):
        cov = scipy.linalg.toeplitz(2.0 ** -np.arange(10))
        assert cov[0, 0] == 1.0
        assert cov[0, 1] == 0.5
        assert cov[0, 9] == 2.0**-9

    def test_cholesky_factorizes(self):
        L = _toeplitz_cholesky(2.0, 10)
        cov = scipy.linalg.toeplitz(2.0 ** -np.arange(10))
        np.testing.assert_allclose(L @ L.T, cov, atol=1e-12)

    def test_sample_covariance(self):
        zbar = gen_base_instruments(100_000, 0)
        cov = scipy.linalg.toeplitz(2.0 ** -np.arange(10))
        sample = zbar.T @ zbar / zbar.shape[0]
        assert np.max(np.abs(sample - cov)) < 0.02


class TestExpandRegime:
    def test_column_counts(self):
        zbar = np.random.default_rng(2).standard_normal((7, 10))
        assert expand_regime(zbar, "dz10").shape[1] == 10
        assert expand_regime(zbar, "dz30").shape[1] == 30
        assert expand_regime(zbar, "dz65").shape[1] == 65
        assert expand_regime(zbar, "dz75").shape[1] == 75

    def test_row_of_ones(self):
        zbar = np.ones((1, 10))
        np.testing.assert_array_equal(expand_regime(zbar, "dz65"), np.ones((1, 65)))

    def test_single_active_coordinate(self):
        zbar = np.zeros((1, 10))
        zbar[0, 0] = 2.0
        row = expand_regime(zbar, "dz65")[0]
        assert row[0] == 2.0  # base
        assert row[10] == 4.0  # square
        np.testing.assert_array_equal(row[20:], 0.0)  # interactions all involve a zero

    def test_exact_powers(self):
        zbar = np.random.default_rng(3).standard_normal((5, 10))
        out = expand_regime(zbar, "dz75")
        np.testing.assert_array_equal(out[:, 10:20], zbar**2)
        np.testing.assert_array_equal(out[:, 65:], zbar**3)
        np.testing.assert_array_equal(out[:, 20], zbar[:, 0] * zbar[:, 1])


class TestStrength:
    def test_mapping(self):
        assert strength_factor("strong", 400) == 1.0
        assert strength_factor("weak", 400) == pytest.approx(0.05)
        assert strength_factor("intermediate", 1000) == pytest.approx(0.1)


class TestGenDgp:
    def test_deterministic_per_rep(self):
        spec = SimulationSpec(n=50, seed=4)
        a, _ = gen_dgp(spec, 3)
        b, _ = gen_dgp(spec, 3)
        c, _ = gen_dgp(spec, 4)
        np.testing.assert_array_equal(a.y, b.y)
        assert not np.array_equal(a.y, c.y)

    def test_structural_identities(self):
        spec = SimulationSpec(n=60, seed=5, rho1=0.5, rho2=0.6, strength="strong")
        dataset, oracle = gen_dgp(spec, 0)
        np.testing.assert_allclose(dataset.X, oracle.Pi + oracle.v, atol=1e-12)
        np.testing.assert_allclose(
            dataset.y, dataset.X @ spec.beta_vector + oracle.eps, atol=1e-12
        )

    def test_zero_knobs_decouple_errors(self):
        spec = SimulationSpec(n=5000, seed=6, rho1=0.0, rho2=0.0, strength="strong")
        dataset, oracle = gen_dgp(spec, 0)
        # v reduces to an independent error; correlation with eps is MC noise
        corr = np.corrcoef(oracle.eps, oracle.v[:, 0])[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(spec.n)
        rho = oracle.true_rho(spec.beta_vector)
        np.testing.assert_array_equal(rho, 0.0)

    def test_true_rho_closed_form_under_null(self):
        spec = SimulationSpec(n=80, seed=7, rho1=0.3, rho2=0.4)
        dataset, oracle = gen_dgp(spec, 1)
        rho = oracle.true_rho(spec.beta_vector)
        np.testing.assert_allclose(
            rho[:, 0], spec.rho2 * (1.0 + oracle.zbar[:, 0]), atol=1e-12
        )

    def test_true_rho_decorrelates_r_from_eps(self):
        # r = x - rho(z) eps(beta0) should be uncorrelated with eps given z;
        # check the unconditional sample covariance at a large n
        spec = SimulationSpec(n=200_000, seed=8, rho1=0.2, rho2=0.5, strength="weak")
        dataset, oracle = gen_dgp(spec, 0)
        r = oracle.r_true(dataset, spec.beta_vector)
        eps = dataset.y - dataset.X @ spec.beta_vector
        cov = np.mean(r[:, 0] * eps)
        scale = np.std(r[:, 0]) * np.std(eps)
        assert abs(cov) / scale < 0.01

    def test_second_endogenous_equation(self):
        spec = SimulationSpec(n=40, seed=9, n_endog=2)
        dataset, oracle = gen_dgp(spec, 0)
        assert dataset.d_x == 2
        assert oracle.Pi.shape == (40, 2)
        rho = oracle.true_rho(spec.beta_vector)
        np.testing.assert_allclose(
            rho[:, 1], spec.rho2 * (1.0 + oracle.zbar[:, 1]), atol=1e-12
        )


class TestSizeExperiment:
    def test_single_rep_degenerate_frequency(self):
        spec = SimulationSpec(n=60, reps=1, tests=("jk",), seed=10, bootstrap_draws=100)
        table = size_experiment(spec)
        assert table.frequency("jk") in (0.0, 1.0)

    def test_disjoint_ranges_pool_exactly(self):
        spec = SimulationSpec(n=60, reps=30, tests=("jk", "sup_score"), seed=11, bootstrap_draws=100)
        full = size_experiment(spec)
        first = size_experiment(SimulationSpec(**{**spec.__dict__, "reps": 10}))
        rest = size_experiment(SimulationSpec(**{**spec.__dict__, "reps": 20}), rep_start=10)
        pooled = first.merged(rest)
        assert pooled.rejections == full.rejections
        assert pooled.reps == full.reps

    def test_mc_se_formula(self):
        spec = SimulationSpec(n=60, reps=25, tests=("jk",), seed=12, bootstrap_draws=100)
        table = size_experiment(spec)
        p = table.frequency("jk")
        assert table.mc_se("jk") == pytest.approx(np.sqrt(p * (1 - p) / 25))

    def test_rows_have_spec_fields(self):
        spec = SimulationSpec(n=60, reps=2, tests=("jk",), seed=13, bootstrap_draws=100)
        rows = size_experiment(spec).to_rows()
        assert rows[0]["n"] == 60 and rows[0]["d_z"] == 10
        assert rows[0]["strength"] == "weak"


class TestPowerCurve:
    def test_single_rep_single_offset(self):
        spec = SimulationSpec(n=60, reps=1, tests=("jk",), seed=14, bootstrap_draws=100)
        table = power_curve(spec, offsets=[0.5], calibrated=False)
        assert table.rejections["jk"][0] in (0, 1)
        assert table.mode == "nominal"

    def test_calibrated_mode_produces_criticals(self):
        spec = SimulationSpec(
            n=60, reps=5, tests=("jk", "sup_score", "thresholding_75"), seed=15, bootstrap_draws=100
        )
        table = power_curve(spec, offsets=[0.0, 1.0], calibrated=True, calibration_reps=40)
        assert set(table.criticals) == {"jk", "sup_score"}
        assert table.criticals["jk"] > 0
        rows = table.to_rows()
        assert len(rows) == 6  # 3 tests x 2 offsets

    def test_strong_identification_has_power(self):
        spec = SimulationSpec(
            n=120, reps=20, tests=("jk",), seed=16, strength="strong", bootstrap_draws=100
        )
        table = power_curve(spec, offsets=[-1.0, 0.0], calibrated=False)
        assert table.frequency("jk", -1.0) > 0.6
        assert table.frequency("jk", 0.0) < 0.3


class TestFstatDemo:
    def test_oracle_base_columns_reproduce_true_f(self):
        rng = child_rng(17, "fstat", 0)
        L = _toeplitz_cholesky(1.1, 10)
        Z10 = rng.standard_normal((200, 10)) @ L.T
        v = rng.standard_normal(200)
        x = (0.7 / np.sqrt(200)) * Z10.sum(axis=1) + v
        Z65 = np.column_stack([Z10, Z10**2, _pairwise_products(Z10)])
        assert first_stage_f(x, Z65[:, :10]) == pytest.approx(first_stage_f(x, Z10), abs=1e-12)

    def test_selecting_everything_is_full_design_ols(self):
        table = fstat_demo(n=200, selected_counts=(65,), reps=3, seed=18)
        # oracle: direct F on the full 65-column design per replication
        direct = []
        L = _toeplitz_cholesky(1.1, 10)
        for r in range(3):
            rng = child_rng(18, "fstat", r)
            Z10 = rng.standard_normal((200, 10)) @ L.T
            v = rng.standard_normal(200)
            x = (0.7 / np.sqrt(200)) * Z10.sum(axis=1) + v
            Z65 = np.column_stack([Z10, Z10**2, _pairwise_products(Z10)])
            direct.append(first_stage_f(x, Z65))
        if table.n_missing[65] == 0:
            assert table.mean_f[65] == pytest.approx(np.mean(direct), rel=1e-8)
        else:
            assert table.n_missing[65] <= 3

    def test_inflation_pattern(self):
        table = fstat_demo(n=400, selected_counts=(1, 5, 10), reps=8, seed=19)
        assert table.mean_f[1] > table.mean_f[5] > table.mean_f[10]
        assert table.mean_f[1] > table.true_f

    def test_count_bounds(self):
        with pytest.raises(ValueError, match=r"\[1, 65\]"):
            fstat_demo(n=100, selected_counts=(0,), reps=1)


class TestOracleDiagnostics:
    def test_noncentrality_orthogonal(self):
        Pi = np.array([1.0, -1.0, 0.0])
        Pi_hat = np.array([1.0, 1.0, 5.0])
        assert oracle_noncentrality(Pi, Pi_hat, np.ones(3), 2.0) == 0.0

    def test_noncentrality_homoskedastic_plugin(self):
        rng = np.random.default_rng(20)
        Pi = rng.standard_normal(50)
        sigma2 = 1.7
        got = oracle_noncentrality(Pi, Pi, np.full(50, sigma2), 0.5)
        assert got == pytest.approx(0.25 * np.sum(Pi**2) / sigma2, rel=1e-12)

    def test_noncentrality_zero_offset(self):
        assert oracle_noncentrality(np.ones(4), np.ones(4), np.ones(4), 0.0) == 0.0

    def test_noncentrality_zero_denominator(self):
        with pytest.raises(ValueError, match="denominator"):
            oracle_noncentrality(np.ones(3), np.zeros(3), np.ones(3), 1.0)

    def test_local_power_index_zero_offset(self):
        draws = np.random.default_rng(21).standard_normal((10, 6))
        assert local_power_index(np.ones(6), draws, 0.0) == 0.0

    def test_local_power_index_deterministic_plugin(self):
        Pi = np.array([1.0, 2.0, 3.0])
        draws = np.tile(Pi, (5, 1))
        offset = 0.7
        s2 = 1.0 / np.max(Pi**2)
        expected = offset**2 * s2 / 3 * np.sum(Pi**2) ** 2
        assert local_power_index(Pi, draws, offset) == pytest.approx(expected, rel=1e-12)

    def test_local_power_index_sign_flip(self):
        rng = np.random.default_rng(22)
        Pi = rng.standard_normal(8)
        draws = rng.standard_normal((20, 8))
        a = local_power_index(Pi, draws, 1.3)
        b = local_power_index(Pi, -draws, 1.3)
        assert a == pytest.approx(b, rel=1e-12)


class TestReplicationErrors:
    def test_failing_rep_index_reported(self):
        # Anderson-Rubin needs d_z < n; dz65 at n=40 fails in replication 0
        spec = SimulationSpec(n=40, regime="dz65", reps=3, tests=("anderson_rubin",), seed=20)
        with pytest.raises(Exception, match="replication 0"):
            size_experiment(spec)

    def test_error_variance_matches_scale_at_fixed_z(self):
        # at a fixed instrument row the structural error is scale(z) times a
        # unit-scale draw, so its variance is scale^2 * 2 for Laplace errors
        from jkiv.sim import _draw_errors
        rng = np.random.default_rng(21)
        zbar_row = np.array([0.7, -1.2, 0.4])
        rho1 = 0.5
        scale = 1.0 + rho1 * (zbar_row[0] ** 2 + zbar_row[1] ** 2 + zbar_row[1] * zbar_row[2])
        draws = scale * _draw_errors(rng, 100_000, "laplace")
        target = scale**2 * 2.0
        assert abs(np.var(draws) - target) / target < 0.02
