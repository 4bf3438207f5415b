"""Critical values, test decisions, and confidence sets by inversion.

The jackknife K test is calibrated against the chi-squared distribution;
the sup-score and conditioning statistics get multiplier-bootstrap
critical values.  The thresholding test runs the jackknife K test when
the conditioning statistic clears a cutoff and the sup-score test
otherwise.  Confidence sets come from inverting a test over a grid of
hypothesized coefficients with common random numbers.
"""

from __future__ import annotations

import concurrent.futures
import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.special
import scipy.stats

from .data import PartialledData
from .hat import HatMatrix, custom_hat, partial_out_hat, projection_hat_deleted, ridge_hat
from .rho import BasisSpec, estimate_rho, null_residuals
from .stats import (
    FirstStage,
    StatisticValue,
    anderson_rubin,
    conditioning_statistic,
    first_stage,
    jk_statistic,
    sup_score,
)
from .streams import child_rng, child_seed


class PipelineError(RuntimeError):
    """An error raised while composing a test, tagged with its stage."""

    def __init__(self, stage: str, error: BaseException):
        super().__init__(f"stage '{stage}': {error}")
        self.stage = stage
        self.error = error


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


@dataclass(frozen=True)
class BootstrapSpec:
    """Multiplier-bootstrap settings.

    ``stream`` separates the sup-score draws from the conditioning draws
    so the two bootstraps never share multipliers.
    """

    draws: int = 1000
    seed: int = 0
    stream: str = "bootstrap"


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test at one hypothesized coefficient."""

    __test__ = False  # not a pytest class, despite the name

    kind: str
    statistic: float
    critical_value: float
    reject: bool
    alpha: float
    p_value: float | None = None
    branch: str | None = None
    conditioning_value: float | None = None
    tau: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "statistic": self.statistic,
            "critical_value": self.critical_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "p_value": self.p_value,
            "branch": self.branch,
            "conditioning_value": self.conditioning_value,
            "tau": self.tau,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True)
class ConfidenceSet:
    """Grid inversion result for a scalar coefficient."""

    grid: np.ndarray
    accepted: np.ndarray
    statistics: np.ndarray
    intervals: tuple
    empty: bool
    alpha: float

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "empty": self.empty,
            "intervals": [list(pair) for pair in self.intervals],
            "grid": self.grid.tolist(),
            "accepted": self.accepted.tolist(),
            "statistics": self.statistics.tolist(),
        }

    def to_csv_text(self) -> str:
        lines = ["grid,accepted,statistic"]
        for g, a, s in zip(self.grid, self.accepted, self.statistics):
            lines.append(f"{g!r},{int(a)},{s!r}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class TestConfig:
    """Everything needed to run one test on a partialled dataset."""

    __test__ = False  # not a pytest class, despite the name

    kind: str = "jk"
    alpha: float = 0.05
    hat: str = "ridge"
    dof_fraction: float = 0.2
    hat_custom: np.ndarray | None = None
    rho_method: str = "lasso"
    rho_known: np.ndarray | None = None
    basis: str = "instruments_plus_intercept"
    k_folds: int = 10
    lam: float | None = None
    bootstrap_draws: int = 1000
    tau: float | None = None
    tau_theta: float = 0.25
    seed: int = 0
    sing_tol: float = 1e-10


def chi2_quantile(p: float, k: int) -> float:
    """Inverse CDF of the chi-squared distribution with k degrees of freedom.

    Inverts the regularized incomplete gamma function with a
    Newton/bisection hybrid; absolute error below 1e-8.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if k < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {k}")
    a = 0.5 * k
    cdf = lambda x: float(scipy.special.gammainc(a, 0.5 * x))
    lo, hi = 0.0, float(max(k, 1))
    while cdf(hi) < p:
        hi *= 2.0
    # Wilson-Hilferty starting point
    z = float(scipy.special.ndtri(p))
    x = k * (1.0 - 2.0 / (9.0 * k) + z * math.sqrt(2.0 / (9.0 * k))) ** 3
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    log_norm = math.lgamma(a) + a * math.log(2.0)
    for _ in range(200):
        f = cdf(x) - p
        if f > 0:
            hi = x
        else:
            lo = x
        if hi - lo < 1e-9:
            break
        pdf = math.exp((a - 1.0) * math.log(x) - 0.5 * x - log_norm) if x > 0 else 0.0
        step = f / pdf if pdf > 0 else 0.0
        nxt = x - step
        if not lo < nxt < hi or pdf == 0.0:
            nxt = 0.5 * (lo + hi)
        x = nxt
    return 0.5 * (lo + hi)


def _order_statistic(draws: np.ndarray, theta: float) -> float:
    """ceil((1 - theta) * B)-th smallest draw."""
    B = draws.shape[0]
    k = min(max(int(math.ceil((1.0 - theta) * B)), 1), B)
    return float(np.partition(draws, k - 1)[k - 1])


def _check_bootstrap(spec: BootstrapSpec):
    if spec.draws < 100:
        raise ValueError(f"need at least 100 bootstrap draws, got {spec.draws}")


def sup_score_critical(eps, Z, theta: float, spec: BootstrapSpec) -> float:
    """Multiplier-bootstrap critical value for the sup-score statistic.

    Each draw multiplies the scores by fresh standard normals and takes
    the maximal self-normalized column sum; returns the
    ceil((1-theta)*B)-th order statistic.
    """
    _check_bootstrap(spec)
    e = np.asarray(eps, dtype=np.float64).reshape(-1)
    Zm = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    norms = np.sqrt(np.sum(Zm**2, axis=0))
    if np.any(norms == 0.0):
        bad = np.nonzero(norms == 0.0)[0]
        raise ValueError(f"instrument columns {bad.tolist()} are identically zero")
    rng = child_rng(spec.seed, spec.stream)
    E = rng.standard_normal((spec.draws, e.shape[0]))
    draws = np.max(np.abs((E * e) @ (Zm / norms)), axis=1)
    return _order_statistic(draws, theta)


def _conditioning_draws(hat: HatMatrix, r_hat, spec: BootstrapSpec) -> np.ndarray:
    _check_bootstrap(spec)
    R = np.asarray(r_hat, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    w = np.sqrt(np.sum(hat.H**2, axis=1))
    valid = w > 0.0
    if not np.any(valid):
        raise ValueError("every row of the hat matrix has zero norm")
    rng = child_rng(spec.seed, spec.stream)
    E = rng.standard_normal((spec.draws, hat.n))
    per_col = np.empty((spec.draws, R.shape[1]))
    wv = w[valid]
    for ell in range(R.shape[1]):
        M = hat.H * R[:, ell]  # M[i, j] = h_ij r_j
        per_col[:, ell] = np.max(np.abs(E @ M[valid].T) / wv, axis=1)
    return np.min(per_col, axis=1)


def conditioning_quantile(hat: HatMatrix, r_hat, theta: float, spec: BootstrapSpec) -> float:
    """Multiplier-bootstrap quantile of the conditioning statistic.

    Per draw the partialled endogenous observations are multiplied by
    fresh standard normals and the conditioning statistic recomputed
    (minimum over endogenous indices of the per-column maximum).
    """
    return _order_statistic(_conditioning_draws(hat, r_hat, spec), theta)


def jk_test(stat: StatisticValue, d_x: int, alpha: float) -> TestResult:
    """Chi-squared decision for the jackknife K statistic."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    crit = chi2_quantile(1.0 - alpha, d_x)
    if stat.degenerate:
        return TestResult(
            kind="jk",
            statistic=0.0,
            critical_value=crit,
            reject=False,
            alpha=alpha,
            p_value=1.0,
            diagnostics={"degenerate": True, **stat.extras},
        )
    p_value = float(scipy.stats.chi2.sf(stat.value, d_x))
    return TestResult(
        kind="jk",
        statistic=stat.value,
        critical_value=crit,
        reject=stat.value > crit,
        alpha=alpha,
        p_value=p_value,
        diagnostics={"degenerate": False},
    )


def thresholding_test(
    jk_result: TestResult,
    ss_stat: StatisticValue,
    ss_crit: float,
    C: StatisticValue,
    tau: float,
) -> TestResult:
    """Run the jackknife K decision when C >= tau, else the sup-score one."""
    if C.value >= tau:
        return TestResult(
            kind="thresholding",
            statistic=jk_result.statistic,
            critical_value=jk_result.critical_value,
            reject=jk_result.reject,
            alpha=jk_result.alpha,
            branch="jk",
            conditioning_value=C.value,
            tau=tau,
            diagnostics=dict(jk_result.diagnostics),
        )
    return TestResult(
        kind="thresholding",
        statistic=ss_stat.value,
        critical_value=ss_crit,
        reject=ss_stat.value > ss_crit,
        alpha=jk_result.alpha,
        branch="sup_score",
        conditioning_value=C.value,
        tau=tau,
        diagnostics={},
    )


def _thresholding_theta(kind: str, config: TestConfig) -> float:
    """Map a thresholding kind name to the bootstrap quantile level theta.

    "thresholding" uses the configured cutoff rule; "thresholding_75"
    takes the cutoff at the 75th quantile of the conditioning statistic's
    null bootstrap distribution (theta = 0.25), and so on.
    """
    if kind == "thresholding":
        return config.tau_theta
    pct = float(kind.split("_", 1)[1])
    if not 0.0 < pct < 100.0:
        raise ValueError(f"invalid thresholding percentile in '{kind}'")
    return 1.0 - pct / 100.0


def _build_hat(data: PartialledData, config: TestConfig) -> HatMatrix:
    if config.hat == "ridge":
        hat = ridge_hat(data.Z, config.dof_fraction)
    elif config.hat == "projection":
        hat = projection_hat_deleted(data.Z)
    elif config.hat == "custom":
        if config.hat_custom is None:
            raise ValueError("hat='custom' requires a matrix in hat_custom")
        hat = custom_hat(config.hat_custom)
    else:
        raise ValueError(f"unknown hat kind '{config.hat}'")
    if data.d_c > 0:
        hat = partial_out_hat(hat, data.source.Z1)
    return hat


_KNOWN_KINDS = ("jk", "sup_score", "thresholding", "anderson_rubin")


def evaluate_tests(data: PartialledData, beta0, config: TestConfig, kinds) -> dict:
    """Run several tests on one dataset, sharing every intermediate.

    The hat matrix, the fitted slopes, the first stage, and the bootstrap
    draws are computed once and reused by every requested test, so e.g.
    "jk", "sup_score", and two thresholding variants cost one pipeline.
    Returns a dict mapping each requested kind to its TestResult.
    """
    kinds = list(kinds)
    for kind in kinds:
        base = kind.split("_", 1)[0] if kind.startswith("thresholding") else kind
        if base not in _KNOWN_KINDS and kind not in _KNOWN_KINDS:
            raise ValueError(f"unknown test kind '{kind}'")
    need_fs = any(k == "jk" or k.startswith("thresholding") for k in kinds)
    need_ss = any(k == "sup_score" or k.startswith("thresholding") for k in kinds)
    thresh_kinds = [k for k in kinds if k.startswith("thresholding")]

    with _stage("residuals"):
        eps = null_residuals(data.y, data.X, beta0)

    rho_model = None
    hat = None
    fs = None
    jk_result = None
    if need_fs:
        with _stage("rho"):
            rho_model = estimate_rho(
                data,
                beta0,
                BasisSpec(kind=config.basis),
                config.rho_method,
                lam=config.lam,
                k_folds=config.k_folds,
                seed=config.seed,
                rho_known=config.rho_known,
            )
        with _stage("hat"):
            hat = _build_hat(data, config)
        with _stage("first_stage"):
            fs = first_stage(hat, rho_model.r_hat, eps)
        with _stage("statistic"):
            jk_stat = jk_statistic(eps, fs, config.sing_tol)
        with _stage("decision"):
            jk_result = jk_test(jk_stat, data.d_x, config.alpha)

    ss_stat = None
    ss_crit = None
    if need_ss:
        with _stage("statistic"):
            ss_stat = sup_score(eps, data.Z)
        with _stage("bootstrap"):
            ss_crit = sup_score_critical(
                eps,
                data.Z,
                config.alpha,
                BootstrapSpec(
                    draws=config.bootstrap_draws,
                    seed=child_seed(config.seed, "bootstrap"),
                    stream="sup_score",
                ),
            )

    C = None
    cond_draws = None
    if thresh_kinds:
        with _stage("statistic"):
            C = conditioning_statistic(hat, rho_model.r_hat)
        if any(_needs_tau_bootstrap(k, config) for k in thresh_kinds):
            with _stage("bootstrap"):
                cond_draws = _conditioning_draws(
                    hat,
                    rho_model.r_hat,
                    BootstrapSpec(
                        draws=config.bootstrap_draws,
                        seed=child_seed(config.seed, "bootstrap"),
                        stream="conditioning",
                    ),
                )

    results: dict[str, TestResult] = {}
    for kind in kinds:
        if kind == "jk":
            results[kind] = jk_result
        elif kind == "sup_score":
            results[kind] = TestResult(
                kind="sup_score",
                statistic=ss_stat.value,
                critical_value=ss_crit,
                reject=ss_stat.value > ss_crit,
                alpha=config.alpha,
            )
        elif kind == "anderson_rubin":
            with _stage("statistic"):
                ar = anderson_rubin(eps, data.Z)
            with _stage("decision"):
                n, d_z = data.n, data.d_z
                crit = float(scipy.stats.f.ppf(1.0 - config.alpha, d_z, n - d_z))
                results[kind] = TestResult(
                    kind="anderson_rubin",
                    statistic=ar.value,
                    critical_value=crit,
                    reject=ar.value > crit,
                    alpha=config.alpha,
                    p_value=float(scipy.stats.f.sf(ar.value, d_z, n - d_z)),
                )
        else:
            with _stage("decision"):
                if kind == "thresholding" and config.tau is not None:
                    tau = float(config.tau)
                else:
                    tau = _order_statistic(cond_draws, _thresholding_theta(kind, config))
                result = thresholding_test(jk_result, ss_stat, ss_crit, C, tau)
                results[kind] = replace(result, kind=kind) if kind != "thresholding" else result
    return results


def _needs_tau_bootstrap(kind: str, config: TestConfig) -> bool:
    return not (kind == "thresholding" and config.tau is not None)


def run_test(data: PartialledData, beta0, config: TestConfig) -> TestResult:
    """Compose residuals, slope estimation, hat construction, and decision."""
    return evaluate_tests(data, beta0, config, [config.kind])[config.kind]


def _invert_point(args):
    data, g, config = args
    return run_test(data, g, config)


def invert_ci(data: PartialledData, grid, config: TestConfig, threads: int = 1) -> ConfidenceSet:
    """Confidence set for a scalar coefficient by grid inversion.

    Every grid point is tested with the same master seed, so bootstrap
    draws and fold assignments are common random numbers across the grid.
    """
    if data.d_x != 1:
        raise ValueError(f"grid inversion needs d_x = 1, got d_x = {data.d_x}")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("grid is empty")
    if not np.all(np.diff(grid) >= 0):
        raise ValueError("grid must be ascending")
    tasks = [(data, float(g), config) for g in grid]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_invert_point, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_invert_point(t) for t in tasks]
    accepted = np.array([not r.reject for r in results], dtype=bool)
    statistics = np.array([r.statistic for r in results])
    return ConfidenceSet(
        grid=grid,
        accepted=accepted,
        statistics=statistics,
        intervals=intervals_from_mask(grid, accepted),
        empty=not bool(accepted.any()),
        alpha=config.alpha,
    )


def intervals_from_mask(grid, accepted) -> tuple:
    """Maximal runs of accepted grid points as [lo, hi] pairs."""
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    accepted = np.asarray(accepted, dtype=bool).reshape(-1)
    intervals = []
    start = None
    for i, ok in enumerate(accepted):
        if ok and start is None:
            start = i
        if not ok and start is not None:
            intervals.append((float(grid[start]), float(grid[i - 1])))
            start = None
    if start is not None:
        intervals.append((float(grid[start]), float(grid[-1])))
    return tuple(intervals)
