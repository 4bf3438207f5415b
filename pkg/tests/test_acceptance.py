"""End-to-end acceptance suite.

Each criterion is one test that prints a PASS/FAIL line with the measured
quantities before asserting.  The suite is Monte Carlo heavy (tens of
minutes on a single core); tolerances are pinned here, not tuned later.
"""

import numpy as np
import scipy.stats

from jkiv import (
    BootstrapSpec,
    SimulationSpec,
    TestConfig,
    chi2_quantile,
    effective_dof,
    estimate_rho,
    first_stage,
    fstat_demo,
    invert_ci,
    jk_statistic,
    lambda_max,
    lasso_fit,
    null_residuals,
    partial_out_controls,
    power_curve,
    projection_hat_deleted,
    ridge_hat,
    size_experiment,
    sup_score_critical,
)
from jkiv.cli import main as cli_main
from jkiv.sim import gen_dgp
from jkiv.streams import child_seed


def _report(num: str, ok: bool, detail: str):
    print(f"\nACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")


def _jk_values_known_rho(spec: SimulationSpec) -> np.ndarray:
    """Null jackknife K statistics with the oracle slope supplied."""
    values = np.empty(spec.reps)
    beta0 = spec.beta_vector
    for r in range(spec.reps):
        dataset, oracle = gen_dgp(spec, r)
        data = partial_out_controls(dataset)
        eps = null_residuals(data.y, data.X, beta0)
        rho = estimate_rho(data, beta0, method="known", rho_known=oracle.true_rho(beta0))
        hat = ridge_hat(data.Z, spec.dof_fraction)
        fs = first_stage(hat, rho.r_hat, eps)
        values[r] = jk_statistic(eps, fs).value
    return values


def test_criterion_01_chi2_null_calibration_infeasible():
    spec = SimulationSpec(
        n=300,
        regime="dz10",
        rho1=0.0,
        rho2=0.3,
        strength="weak",
        reps=5000,
        tests=("jk",),
        seed=11,
        error_dist="gaussian",
        rho_method="known",
    )
    values = _jk_values_known_rho(spec)
    ks = scipy.stats.kstest(values, "chi2", args=(1,)).statistic
    reject = float(np.mean(values > chi2_quantile(0.95, 1)))
    ok = ks < 0.03 and abs(reject - 0.05) <= 0.012
    _report("01", ok, f"KS distance {ks:.4f} (< 0.03), rejection {reject:.4f} (0.05 +/- 0.012)")
    assert ks < 0.03
    assert abs(reject - 0.05) <= 0.012


def test_criterion_02_size_cell_weak_identification():
    spec = SimulationSpec(
        n=200,
        regime="dz10",
        rho1=0.2,
        rho2=0.3,
        strength="weak",
        reps=2000,
        bootstrap_draws=500,
        tests=("jk", "sup_score", "thresholding_75"),
        seed=42,
    )
    table = size_experiment(spec)
    targets = {"jk": 0.0516, "sup_score": 0.0352, "thresholding_75": 0.0406}
    freqs = {t: table.frequency(t) for t in spec.tests}
    ok = all(abs(freqs[t] - targets[t]) <= 0.02 for t in targets)
    detail = ", ".join(f"{t}={freqs[t]:.4f} (target {targets[t]})" for t in targets)
    _report("02", ok, detail + " each +/- 0.02")
    for t, target in targets.items():
        assert abs(freqs[t] - target) <= 0.02


def test_criterion_03_size_cell_strong_identification():
    spec = SimulationSpec(
        n=500,
        regime="dz30",
        rho1=0.2,
        rho2=0.3,
        strength="strong",
        reps=2000,
        bootstrap_draws=500,
        tests=("jk",),
        seed=42,
    )
    freq = size_experiment(spec).frequency("jk")
    ok = abs(freq - 0.0502) <= 0.02
    _report("03", ok, f"jk={freq:.4f} (target 0.0502 +/- 0.02)")
    assert abs(freq - 0.0502) <= 0.02


def test_criterion_04_fstat_demonstration():
    table = fstat_demo(n=1000, selected_counts=(1, 5, 10, 20, 40), reps=500, seed=0)
    monotone = all(
        table.mean_f[a] >= table.mean_f[b]
        for a, b in zip((1, 5, 10, 20), (5, 10, 20, 40))
    )
    ok = (
        abs(table.true_f - 5.234) <= 1.0
        and table.mean_f[1] >= 3.0 * table.true_f
        and monotone
    )
    _report(
        "04",
        ok,
        f"true-instrument F {table.true_f:.3f} (5.234 +/- 1.0), "
        f"F(k=1)/true {table.mean_f[1] / table.true_f:.2f} (>= 3), "
        f"monotone non-increasing: {monotone}",
    )
    assert abs(table.true_f - 5.234) <= 1.0
    assert table.mean_f[1] >= 3.0 * table.true_f
    assert monotone


def test_criterion_05_power_curve_shape():
    reps, calibration_reps = 500, 2000
    spec = SimulationSpec(
        n=500,
        regime="dz65",
        rho1=0.2,
        rho2=0.3,
        strength="intermediate",
        reps=reps,
        bootstrap_draws=500,
        tests=("jk", "sup_score", "thresholding_75"),
        seed=0,
    )
    table = power_curve(
        spec, offsets=(-2.0, 0.0, 3.0), calibrated=True, calibration_reps=calibration_reps
    )
    # two MC standard errors of each estimated frequency, sqrt(p(1-p)/reps)
    at0 = {t: table.frequency(t, 0.0) for t in spec.tests}
    tol = {t: 2.0 * table.mc_se(t, 0.0) for t in spec.tests}
    size_ok = all(abs(at0[t] - 0.05) <= tol[t] for t in spec.tests)
    jk_neg = table.frequency("jk", -2.0)
    ss_neg = table.frequency("sup_score", -2.0)
    jk_pos = table.frequency("jk", 3.0)
    th_pos = table.frequency("thresholding_75", 3.0)
    ok = size_ok and jk_neg > ss_neg and th_pos > jk_pos
    _report(
        "05",
        ok,
        f"at 0: {', '.join(f'{t}={at0[t]:.3f} (+/- {tol[t]:.4f})' for t in spec.tests)}; "
        f"jk(-2)={jk_neg:.3f} > sup_score(-2)={ss_neg:.3f}; "
        f"thresholding(+3)={th_pos:.3f} > jk(+3)={jk_pos:.3f}",
    )
    for t in spec.tests:
        assert abs(at0[t] - 0.05) <= tol[t]
    assert jk_neg > ss_neg
    assert th_pos > jk_pos


def test_criterion_06_oracle_equivalence_and_two_endogenous():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(5, 40))
        eps = rng.standard_normal(n)
        Pi = rng.standard_normal(n)

        class FakeFS:
            Pi_hat = Pi[:, None]
            Pi_eps = (eps * Pi)[:, None]

        general = jk_statistic(eps, FakeFS()).value
        simplified = (eps @ Pi) ** 2 / np.sum(eps**2 * Pi**2)
        worst = max(worst, abs(general - simplified) / max(1.0, simplified))
    spec = SimulationSpec(
        n=500,
        regime="dz10",
        rho1=0.2,
        rho2=0.3,
        strength="weak",
        reps=2000,
        tests=("jk",),
        seed=7,
        n_endog=2,
    )
    freq = size_experiment(spec).frequency("jk")
    ok = worst <= 1e-10 and abs(freq - 0.05) <= 0.02
    _report(
        "06",
        ok,
        f"max |general - simplified| (relative) {worst:.2e} (<= 1e-10); "
        f"d_x=2 size vs chi2_2: {freq:.4f} (0.05 +/- 0.02)",
    )
    assert worst <= 1e-10
    assert abs(freq - 0.05) <= 0.02


def test_criterion_07_solver_correctness():
    rng = np.random.default_rng(3)
    worst_kkt = 0.0
    for _ in range(200):
        n = int(rng.integers(8, 80))
        d_b = int(rng.integers(2, 120))  # frequently d_b > n
        design = rng.standard_normal((n, d_b))
        response = rng.standard_normal(n)
        lmax = lambda_max(response, design)
        lam = float(rng.uniform(0.03, 1.2)) * max(lmax, 0.05)
        phi = lasso_fit(response, design, lam)
        grad = -2.0 * design.T @ (response - design @ phi) / n
        gap = 0.0
        for j in range(d_b):
            if phi[j] == 0.0:
                gap = max(gap, abs(grad[j]) - lam)
            else:
                gap = max(gap, abs(grad[j] + lam * np.sign(phi[j])))
        worst_kkt = max(worst_kkt, gap)

    # lam >= lambda_max forces the zero solution
    design = rng.standard_normal((40, 6))
    response = rng.standard_normal(40)
    zero_ok = np.all(lasso_fit(response, design, lambda_max(response, design)) == 0.0)

    # orthogonal designs match the coordinatewise soft-threshold closed form
    worst_ortho = 0.0
    for _ in range(20):
        q, _ = np.linalg.qr(rng.standard_normal((50, 3)))
        design = q * rng.uniform(0.5, 3.0, size=3)
        response = rng.standard_normal(50)
        lam = 0.1
        phi = lasso_fit(response, design, lam)
        for j in range(3):
            col = design[:, j]
            ols = (col @ response) / (col @ col)
            shift = lam / 2 * 50 / (col @ col)
            expected = np.sign(ols) * max(abs(ols) - shift, 0.0)
            worst_ortho = max(worst_ortho, abs(phi[j] - expected))

    ok = worst_kkt <= 1e-6 + 1e-9 and zero_ok and worst_ortho <= 1e-8
    _report(
        "07",
        ok,
        f"worst KKT violation {worst_kkt:.2e} over 200 instances (<= 1e-6); "
        f"zero at lambda_max: {zero_ok}; "
        f"orthogonal soft-threshold gap {worst_ortho:.2e} (<= 1e-8)",
    )
    assert worst_kkt <= 1e-6 + 1e-9
    assert zero_ok
    assert worst_ortho <= 1e-8


def test_criterion_08_hat_matrix_contract():
    rng = np.random.default_rng(4)
    worst_dof_excess = -np.inf
    max_diag = 0.0
    for _ in range(10):
        n = int(rng.integers(20, 60))
        d_z = int(rng.integers(n // 5 + 1, n))  # cap binds
        Z = rng.standard_normal((n, d_z))
        hat = ridge_hat(Z, 0.2)
        worst_dof_excess = max(worst_dof_excess, effective_dof(Z, hat.ridge_penalty) - n / 5)
        max_diag = max(max_diag, float(np.max(np.abs(np.diag(hat.H)))))
    worst_invariance = 0.0
    for _ in range(10):
        Z = rng.standard_normal((30, 4))
        A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        gap = np.max(np.abs(projection_hat_deleted(Z).H - projection_hat_deleted(Z @ A).H))
        worst_invariance = max(worst_invariance, float(gap))
    ok = worst_dof_excess <= 1e-4 and max_diag == 0.0 and worst_invariance <= 1e-9
    _report(
        "08",
        ok,
        f"max effective-dof excess over n/5: {worst_dof_excess:.2e} (<= 1e-4); "
        f"max |diagonal| {max_diag} (= 0); "
        f"projection span-invariance gap {worst_invariance:.2e} (<= 1e-9)",
    )
    assert worst_dof_excess <= 1e-4
    assert max_diag == 0.0
    assert worst_invariance <= 1e-9


def test_criterion_09_sup_score_bootstrap_validity():
    # half-normal oracle: eps = z = 1 makes each draw |N(0, 1)| exactly
    ones = np.ones(4)
    crit = sup_score_critical(
        ones, ones[:, None], 0.05, BootstrapSpec(draws=100_000, seed=5, stream="sup_score")
    )
    half_normal_gap = abs(crit - 1.95996)

    spec = SimulationSpec(
        n=200,
        regime="dz10",
        rho1=0.0,
        rho2=0.3,
        strength="weak",
        reps=2000,
        bootstrap_draws=1000,
        tests=("sup_score",),
        seed=9,
        error_dist="gaussian",
    )
    freq = size_experiment(spec).frequency("sup_score")
    ok = half_normal_gap <= 0.05 and abs(freq - 0.05) <= 0.02
    _report(
        "09",
        ok,
        f"half-normal quantile gap {half_normal_gap:.4f} (<= 0.05 at B=1e5); "
        f"Gaussian-null sup-score size {freq:.4f} (0.05 +/- 0.02)",
    )
    assert half_normal_gap <= 0.05
    assert abs(freq - 0.05) <= 0.02


def test_criterion_10_determinism_across_workers(tmp_path):
    out = str(tmp_path / "size.json")
    base = [
        "simulate", "--n", "80", "--reps", "12", "--tests", "jk,thresholding_75",
        "--draws", "150", "--seed", "5", "--output", out,
    ]
    assert cli_main(base + ["--threads", "1"]) == 0
    json_serial = open(out, "rb").read()
    csv_serial = open(out[:-5] + ".csv", "rb").read()
    assert cli_main(base + ["--threads", "8"]) == 0
    sim_ok = (
        open(out, "rb").read() == json_serial
        and open(out[:-5] + ".csv", "rb").read() == csv_serial
    )

    out_f = str(tmp_path / "fstat.json")
    base_f = [
        "fstat-demo", "--n", "200", "--reps", "6", "--counts", "1,5",
        "--seed", "5", "--output", out_f,
    ]
    assert cli_main(base_f + ["--threads", "1"]) == 0
    f_json = open(out_f, "rb").read()
    f_csv = open(out_f[:-5] + ".csv", "rb").read()
    assert cli_main(base_f + ["--threads", "8"]) == 0
    fstat_ok = (
        open(out_f, "rb").read() == f_json
        and open(out_f[:-5] + ".csv", "rb").read() == f_csv
    )
    ok = sim_ok and fstat_ok
    _report(
        "10",
        ok,
        f"byte-identical JSON/CSV at 1 vs 8 workers: simulate={sim_ok}, fstat-demo={fstat_ok}",
    )
    assert sim_ok and fstat_ok


def _coverage_rep(args):
    spec, r, grid = args
    dataset, _ = gen_dgp(spec, r)
    data = partial_out_controls(dataset)
    config = TestConfig(kind="jk", alpha=0.05, seed=child_seed(spec.seed, "rep", r))
    cs = invert_ci(data, grid, config)
    return any(lo <= spec.beta_true <= hi for lo, hi in cs.intervals)


def test_criterion_11_synthetic_ci_coverage():
    # companion check to the acceptance note: the empirical-application CIs
    # are not reproducible without the data, so the inversion protocol is
    # validated by synthetic coverage instead
    spec = SimulationSpec(
        n=300,
        regime="dz10",
        rho1=0.2,
        rho2=0.3,
        strength="strong",
        reps=200,
        tests=("jk",),
        seed=13,
    )
    grid = np.linspace(spec.beta_true - 1.5, spec.beta_true + 1.5, 61)
    covered = 0
    for r in range(spec.reps):
        covered += _coverage_rep((spec, r, grid))
    coverage = covered / spec.reps
    ok = abs(coverage - 0.95) <= 0.04
    _report("11", ok, f"CI coverage of beta over {spec.reps} reps: {coverage:.3f} (0.95 +/- 0.04)")
    assert abs(coverage - 0.95) <= 0.04
