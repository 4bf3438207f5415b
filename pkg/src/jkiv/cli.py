"""Command-line front end.

Subcommands: ``test``, ``invert``, ``simulate``, ``fstat-demo``,
``diagnose``.  Options may come from a flat JSON config file
(``--config``); command-line flags override file values, and unknown
file keys are rejected.  Results are written as JSON (tables also as
CSV) with the fully resolved configuration and seed embedded, so any run
can be replayed exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import DataError, load_csv, partial_out_controls
from .hat import design_diagnostics
from .inference import PipelineError, TestConfig, _build_hat, invert_ci, run_test
from .rho import BasisSpec, ConvergenceError, estimate_rho, null_residuals
from .sim import SimulationSpec, fstat_demo, size_experiment
from .streams import child_seed

_COMMANDS = ("test", "invert", "simulate", "fstat-demo", "diagnose")


class CliInputError(ValueError):
    """Bad flags, config keys, or input files."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved options of one CLI invocation."""

    command: str
    data: str | None = None
    schema: str | None = None
    kind: str = "jk"
    beta0: tuple = ()
    grid_lo: float | None = None
    grid_hi: float | None = None
    grid_points: int = 300
    alpha: float = 0.05
    hat: str = "ridge"
    dof_fraction: float = 0.2
    hat_path: str | None = None
    rho: str = "lasso"
    rho_path: str | None = None
    basis: str = "instruments_plus_intercept"
    cv: str = "kfold"
    cv_folds: int = 10
    draws: int = 1000
    tau: float | None = None
    tau_theta: float = 0.25
    n: int | None = None
    regime: str = "dz10"
    rho1: float = 0.2
    rho2: float = 0.3
    strength: str = "weak"
    beta: float = 1.0
    reps: int = 1000
    tests: tuple = ("jk",)
    error_dist: str = "laplace"
    counts: tuple = (1, 5, 10, 20, 40)
    q: float = 25.0
    seed: int = 0
    output: str = "jkiv_result.json"
    threads: int = 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["beta0"] = list(self.beta0)
        out["tests"] = list(self.tests)
        out["counts"] = list(self.counts)
        # worker count affects scheduling only, never results; keep the
        # echoed config identical across thread settings
        del out["threads"]
        return out


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if v != "")
    except ValueError:
        raise CliInputError(f"cannot parse float list from {text!r}") from None


def _parse_ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v != "")
    except ValueError:
        raise CliInputError(f"cannot parse integer list from {text!r}") from None


def _parse_tests(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(str(t) for t in text)
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so bad flags map to exit code 1
    def error(self, message):
        raise CliInputError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="jkiv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="flat JSON config file; flags override")
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
        p.add_argument("--threads", type=int)
        p.add_argument("--alpha", type=float)

    def add_data(p):
        p.add_argument("--data", help="CSV file with a header row")
        p.add_argument("--schema", help="JSON file mapping roles to column names")
        p.add_argument("--hat", choices=["ridge", "projection", "custom"])
        p.add_argument("--dof-fraction", type=float, dest="dof_fraction")
        p.add_argument("--hat-path", dest="hat_path")
        p.add_argument("--rho", choices=["lasso", "post_lasso", "known"])
        p.add_argument("--rho-path", dest="rho_path")
        p.add_argument("--basis", choices=["instruments_plus_intercept", "instruments_only"])
        p.add_argument("--cv", choices=["kfold", "loo"])
        p.add_argument("--cv-folds", type=int, dest="cv_folds")
        p.add_argument("--draws", type=int)
        p.add_argument("--tau", type=float)
        p.add_argument("--tau-theta", type=float, dest="tau_theta")

    p_test = sub.add_parser("test", help="run one test at a hypothesized coefficient")
    add_common(p_test)
    add_data(p_test)
    p_test.add_argument("--kind", choices=["jk", "sup_score", "thresholding", "anderson_rubin"])
    p_test.add_argument("--beta0", help="comma-separated hypothesized coefficients")

    p_inv = sub.add_parser("invert", help="confidence set by grid inversion")
    add_common(p_inv)
    add_data(p_inv)
    p_inv.add_argument("--kind", choices=["jk", "sup_score", "thresholding", "anderson_rubin"])
    p_inv.add_argument("--grid-lo", type=float, dest="grid_lo")
    p_inv.add_argument("--grid-hi", type=float, dest="grid_hi")
    p_inv.add_argument("--grid-points", type=int, dest="grid_points")

    p_sim = sub.add_parser("simulate", help="null rejection frequencies for one DGP cell")
    add_common(p_sim)
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--regime", choices=["dz10", "dz30", "dz65", "dz75"])
    p_sim.add_argument("--rho1", type=float)
    p_sim.add_argument("--rho2", type=float)
    p_sim.add_argument("--strength", choices=["strong", "weak", "intermediate"])
    p_sim.add_argument("--beta", type=float)
    p_sim.add_argument("--reps", type=int)
    p_sim.add_argument("--tests", help="comma-separated test kinds")
    p_sim.add_argument("--draws", type=int)
    p_sim.add_argument("--rho", choices=["lasso", "post_lasso", "known"])
    p_sim.add_argument("--error-dist", choices=["laplace", "gaussian"], dest="error_dist")

    p_f = sub.add_parser("fstat-demo", help="post-selection first-stage F statistics")
    add_common(p_f)
    p_f.add_argument("--n", type=int)
    p_f.add_argument("--reps", type=int)
    p_f.add_argument("--counts", help="comma-separated target support sizes")

    p_diag = sub.add_parser("diagnose", help="balanced-design diagnostics for a dataset")
    add_common(p_diag)
    add_data(p_diag)
    p_diag.add_argument("--beta0", help="comma-separated hypothesized coefficients")
    p_diag.add_argument("--q", type=float)

    return parser


def parse_config(argv) -> RunConfig:
    """Resolve flags, optional config file, environment, and defaults."""
    ns = _build_parser().parse_args(argv)
    values: dict = {}

    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError:
            raise CliInputError(f"config file not found: {ns.config}") from None
        except json.JSONDecodeError as exc:
            raise CliInputError(f"config file {ns.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise CliInputError("config file must hold a flat JSON object")
        for key, value in file_values.items():
            if key == "command" or key not in _FIELD_TYPES:
                raise CliInputError(f"unknown config key '{key}'")
            values[key] = value

    for key, value in vars(ns).items():
        if key in ("config", "command") or value is None:
            continue
        values[key] = value

    if "seed" not in values and os.environ.get("JKIV_SEED"):
        try:
            values["seed"] = int(os.environ["JKIV_SEED"])
        except ValueError:
            raise CliInputError(
                f"JKIV_SEED is not an integer: {os.environ['JKIV_SEED']!r}"
            ) from None

    if "beta0" in values:
        values["beta0"] = _parse_floats(values["beta0"]) if not isinstance(
            values["beta0"], (list, tuple)
        ) else tuple(float(v) for v in values["beta0"])
    if "tests" in values:
        values["tests"] = _parse_tests(values["tests"])
    if "counts" in values:
        values["counts"] = _parse_ints(values["counts"]) if not isinstance(
            values["counts"], (list, tuple)
        ) else tuple(int(v) for v in values["counts"])

    command = ns.command
    try:
        config = RunConfig(command=command, **values)
    except TypeError as exc:
        raise CliInputError(str(exc)) from None
    _validate(config)
    return config


def _validate(config: RunConfig):
    cmd = config.command
    if cmd not in _COMMANDS:
        raise CliInputError(f"unknown command '{cmd}'")
    if cmd in ("test", "invert", "diagnose"):
        if not config.data or not config.schema:
            raise CliInputError(f"'{cmd}' requires --data and --schema")
    if cmd in ("test", "diagnose") and not config.beta0:
        raise CliInputError(f"'{cmd}' requires --beta0")
    if cmd == "invert" and (config.grid_lo is None or config.grid_hi is None):
        raise CliInputError("'invert' requires --grid-lo and --grid-hi")
    if cmd == "simulate" and config.n is None:
        raise CliInputError("'simulate' requires --n")
    if cmd == "fstat-demo" and config.n is None:
        raise CliInputError("'fstat-demo' requires --n")
    if config.hat == "custom" and not config.hat_path:
        raise CliInputError("hat='custom' requires --hat-path")
    if config.rho == "known" and not config.rho_path and cmd != "simulate":
        raise CliInputError("rho='known' requires --rho-path")


def _load_matrix(path: str, what: str) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError:
        raise CliInputError(f"{what} file not found: {path}") from None
    except ValueError as exc:
        raise CliInputError(f"{what} file {path}: {exc}") from None


def _load_schema(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliInputError(f"schema file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliInputError(f"schema file {path}: {exc}") from None


def _test_config(config: RunConfig, n: int) -> TestConfig:
    hat_custom = _load_matrix(config.hat_path, "hat matrix") if config.hat_path else None
    rho_known = None
    if config.rho == "known" and config.rho_path:
        rho_known = _load_matrix(config.rho_path, "known rho")
    return TestConfig(
        kind=config.kind,
        alpha=config.alpha,
        hat=config.hat,
        dof_fraction=config.dof_fraction,
        hat_custom=hat_custom,
        rho_method=config.rho,
        rho_known=rho_known,
        basis=config.basis,
        k_folds=n if config.cv == "loo" else config.cv_folds,
        bootstrap_draws=config.draws,
        tau=config.tau,
        tau_theta=config.tau_theta,
        seed=config.seed,
    )


def _write_output(config: RunConfig, result: dict, csv_text: str | None = None) -> list:
    payload = {"command": config.command, "config": config.to_dict(), "result": result}
    written = [config.output]
    with open(config.output, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    if csv_text is not None:
        base = config.output
        csv_path = base[:-5] + ".csv" if base.endswith(".json") else base + ".csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        written.append(csv_path)
    return written


def _run_test_command(config: RunConfig) -> dict:
    dataset = load_csv(config.data, _load_schema(config.schema))
    data = partial_out_controls(dataset)
    result = run_test(data, np.asarray(config.beta0), _test_config(config, data.n))
    line = (
        f"{result.kind}: statistic={result.statistic:.6g} "
        f"critical={result.critical_value:.6g} reject={result.reject}"
    )
    if result.branch:
        line += f" branch={result.branch}"
    print(line)
    return result.to_dict()


def _run_invert_command(config: RunConfig):
    dataset = load_csv(config.data, _load_schema(config.schema))
    data = partial_out_controls(dataset)
    grid = np.linspace(config.grid_lo, config.grid_hi, config.grid_points)
    cs = invert_ci(data, grid, _test_config(config, data.n), threads=config.threads)
    if cs.empty:
        print(f"{config.kind}: confidence set is empty at alpha={config.alpha}")
    else:
        txt = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in cs.intervals)
        print(f"{config.kind}: {100 * (1 - config.alpha):.0f}% confidence set {txt}")
    return cs.to_dict(), cs.to_csv_text()


def _run_simulate_command(config: RunConfig):
    spec = SimulationSpec(
        n=config.n,
        regime=config.regime,
        rho1=config.rho1,
        rho2=config.rho2,
        strength=config.strength,
        beta_true=config.beta,
        reps=config.reps,
        bootstrap_draws=config.draws,
        tests=config.tests,
        seed=config.seed,
        alpha=config.alpha,
        error_dist=config.error_dist,
        rho_method=config.rho,
        dof_fraction=config.dof_fraction,
        basis=config.basis,
        k_folds=config.cv_folds,
    )
    table = size_experiment(spec, threads=config.threads)
    for row in table.to_rows():
        print(
            f"{row['test']}: frequency={row['frequency']:.4f} "
            f"(mc_se={row['mc_se']:.4f}, reps={table.reps})"
        )
    return table.to_dict(), table.to_csv_text()


def _run_fstat_command(config: RunConfig):
    table = fstat_demo(
        n=config.n,
        selected_counts=config.counts,
        reps=config.reps,
        seed=config.seed,
        threads=config.threads,
    )
    for row in table.to_rows():
        print(f"selected={row['selected']}: mean F={row['mean_f']:.3f} (missing={row['missing']})")
    return table.to_dict(), table.to_csv_text()


def _run_diagnose_command(config: RunConfig) -> dict:
    dataset = load_csv(config.data, _load_schema(config.schema))
    data = partial_out_controls(dataset)
    tc = _test_config(config, data.n)
    rho_model = estimate_rho(
        data,
        np.asarray(config.beta0),
        BasisSpec(kind=tc.basis),
        tc.rho_method,
        k_folds=tc.k_folds,
        seed=tc.seed,
        rho_known=tc.rho_known,
    )
    hat = _build_hat(data, tc)
    diag = design_diagnostics(hat, rho_model.r_hat, q=config.q)
    report = diag.to_dict()
    report["hat"] = {"kind": hat.kind, "ridge_penalty": hat.ridge_penalty, "dof": hat.dof}
    print(json.dumps(report, indent=2))
    return report


def execute(config: RunConfig) -> int:
    """Dispatch a resolved configuration; returns the process exit code."""
    try:
        csv_text = None
        if config.command == "test":
            result = _run_test_command(config)
        elif config.command == "invert":
            result, csv_text = _run_invert_command(config)
        elif config.command == "simulate":
            result, csv_text = _run_simulate_command(config)
        elif config.command == "fstat-demo":
            result, csv_text = _run_fstat_command(config)
        else:
            result = _run_diagnose_command(config)
        written = _write_output(config, result, csv_text)
        print("wrote " + " and ".join(written))
        return 0
    except (CliInputError, DataError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, ConvergenceError, np.linalg.LinAlgError, ValueError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
    except CliInputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    return execute(config)


if __name__ == "__main__":
    sys.exit(main())
