"""Command-line interface: ``ivxq <subcommand> [options]``.

Input CSV files are wide: ``t, y1, y2, x1_1..x1_p, x2_1..x2_q`` with the
regressors stored at their own dates. Fits align ``y_t`` with ``x_{t-1}``,
so the first row only supplies the initial regressor values.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .exceptions import (
    CollinearityError,
    ConfigurationError,
    ConvergenceError,
    ExperimentFailure,
    InputDataError,
    InsufficientTailDataError,
    IvxqError,
    SingularDesignError,
)
from .harness import run_distribution_check, run_power_experiment, run_size_experiment
from .ivx import ivx_wald
from .scoring import coverage_backtest
from .dgp import simulate_predictive_system
from .twostage import delta_wald, forecast_pair, stage1_var, stage2_covar

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_TOO_SHORT = 5
EXIT_ESTIMATION = 6
EXIT_EXPERIMENT = 7
EXIT_IO = 8

# quantile sparsity estimates need at least 20 aligned observations
MIN_ROWS = 21
MEAN = "mean"  # --tau value selecting the conditional-mean estimators


class CliError(Exception):
    def __init__(self, code, kind, message, field=None):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.field = field


# ----------------------------------------------------------------------------
# Files
# ----------------------------------------------------------------------------


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(payload):
    return json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2) + "\n"


def read_panel(path, need_y2=False, min_rows=MIN_ROWS):
    """Read a wide CSV into ``(t, y1, y2, x1, x2)`` arrays, validating every cell."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {path}: {exc.strerror}", field=str(path))
    if not rows:
        raise InputDataError("input CSV is empty", field="header")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    required = ["t", "y1"] + (["y2"] if need_y2 else [])
    for name in required:
        if name not in header:
            raise InputDataError(f"missing column '{name}'", field=name)
    x1_cols = sorted((h for h in header if h.startswith("x1_")), key=lambda h: int(h[3:]))
    x2_cols = sorted((h for h in header if h.startswith("x2_")), key=lambda h: int(h[3:]))
    if not x1_cols:
        raise InputDataError("missing regressor columns 'x1_1', 'x1_2', ...", field="x1_1")
    if need_y2 and not x2_cols:
        raise InputDataError("missing regressor columns 'x2_1', 'x2_2', ...", field="x2_1")

    index = {h: j for j, h in enumerate(header)}
    wanted = ["t", "y1"] + (["y2"] if "y2" in index else []) + x1_cols + x2_cols
    data = {name: np.empty(len(body)) for name in wanted}
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise InputDataError(f"line {i} has {len(row)} fields, header has {len(header)}", field=f"line {i}")
        for name in wanted:
            text = row[index[name]].strip()
            try:
                value = float(text)
            except ValueError:
                raise InputDataError(f"non-numeric value {text!r} in column '{name}' at line {i}", field=name)
            if not math.isfinite(value):
                raise InputDataError(f"non-finite value {text!r} in column '{name}' at line {i}", field=name)
            data[name][i - 2] = value
    if len(body) < min_rows:
        raise CliError(EXIT_TOO_SHORT, "too_short", f"need at least {min_rows} rows, got {len(body)}", field="rows")
    x1 = np.column_stack([data[c] for c in x1_cols])
    x2 = np.column_stack([data[c] for c in x2_cols]) if x2_cols else None
    return data["t"], data["y1"], data.get("y2"), x1, x2


def _aligned(y, x):
    """Responses from the second row on, paired with the previous regressor row."""
    return y[1:], x[:-1]


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------


def _run_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        dgp = replace(cfg.dgp, seed=args.seed)
        exp = None if cfg.experiment is None else replace(cfg.experiment, dgp=dgp)
        cfg = replace(cfg, dgp=dgp, experiment=exp)
    if args.tau is not None:
        cfg = replace(cfg, tau=None if args.tau == MEAN else args.tau)
    return cfg


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("IVXQ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"IVXQ_THREADS must be an integer, got {env!r}")
    return 1


def _wald_dict(res):
    return {"statistic": res.statistic, "df": res.df, "p_value": res.p_value}


def cmd_simulate(args, cfg):
    tau = 0.5 if cfg.tau is None else cfg.tau
    system = simulate_predictive_system(cfg.dgp, cfg.n, tau=tau)
    path = os.path.join(args.out, "simulated.csv")
    atomic_write(path, system.to_csv())
    return [f"simulated n={cfg.n} (seed {cfg.dgp.seed}) -> {path}"]


def _stage1_payload(st):
    fit = st.qr_ivx
    names = ["intercept"] + [f"x1_{j + 1}" for j in range(st.coef.size)]
    return {
        "mode": st.mode,
        "tau": st.tau,
        "names": names,
        "coef": st.params.tolist(),
        "slope_cov": fit.covariance.tolist(),
        "wald_beta": _wald_dict(ivx_wald(fit)),
    }


def cmd_fit_var(args, cfg):
    t, y1, _, x1, _ = read_panel(args.input)
    y, x = _aligned(y1, x1)
    st = stage1_var(y, x, cfg.tau, cfg.ivx)
    payload = {"command": "fit-var", "n": int(y.size), **_stage1_payload(st)}
    path = os.path.join(args.out, "fit_var.json")
    atomic_write(path, _json(payload))
    series = ["t,var"] + [f"{int(tt) if tt.is_integer() else tt!r},{v!r}" for tt, v in zip(t[1:], st.generated)]
    atomic_write(os.path.join(args.out, "fitted_var.csv"), "\r\n".join(series) + "\r\n")
    coefs = ", ".join(f"{name}={c:.6g}" for name, c in zip(payload["names"], payload["coef"]))
    return [f"stage 1 ({st.mode}, tau={st.tau}) n={y.size}: {coefs}", f"-> {path}"]


def _fit_both(y1, y2, x1, x2, cfg):
    ya, xa = _aligned(y1, x1)
    yb, xb = _aligned(y2, x2)
    st = stage1_var(ya, xa, cfg.tau, cfg.ivx)
    return stage2_covar(yb, xb, st, cfg.tau, cfg.ivx)


def cmd_fit_covar(args, cfg):
    _, y1, y2, x1, x2 = read_panel(args.input, need_y2=True)
    fit = _fit_both(y1, y2, x1, x2, cfg)
    tests = delta_wald(fit)
    payload = {
        "command": "fit-covar",
        "mode": fit.mode,
        "tau": fit.tau,
        "n": int(fit.design2.shape[0]),
        "stage1": _stage1_payload(fit.stage1),
        "names": list(fit.names),
        "coef": fit.coef2.tolist(),
        "naive_cov": fit.naive_cov.tolist(),
        "corrected_cov": fit.corrected_cov.tolist(),
        "delta_wald": {"corrected": _wald_dict(tests.corrected), "naive": _wald_dict(tests.naive)},
    }
    path = os.path.join(args.out, "fit_covar.json")
    atomic_write(path, _json(payload))
    atomic_write(os.path.join(args.out, "fit_covar.csv"), fit.to_csv())
    return [
        f"stage 2 ({fit.mode}, tau={fit.tau}) n={payload['n']}: delta={fit.delta:.6g}",
        f"  delta Wald corrected p={tests.corrected.p_value:.4f}, naive p={tests.naive.p_value:.4f}",
        f"-> {path}",
    ]


def cmd_forecast(args, cfg):
    t, y1, y2, x1, x2 = read_panel(args.input, need_y2=True)
    fit = _fit_both(y1, y2, x1, x2, cfg)
    pair = forecast_pair(fit, x1[-1], x2[-1], index=int(t[-1]) + 1)
    path = os.path.join(args.out, "forecast.json")
    atomic_write(path, _json({"command": "forecast", **pair.to_dict()}))
    return [f"t={pair.index}: VaR={pair.var_forecast:.6g}, CoVaR={pair.covar_forecast:.6g}", f"-> {path}"]


def _window_forecast(task):
    y1, y2, x1, x2, cfg, end = task
    fit = _fit_both(y1, y2, x1, x2, cfg)
    pair = forecast_pair(fit, x1[-1], x2[-1], index=end)
    return pair.var_forecast, pair.covar_forecast


def cmd_backtest(args, cfg):
    if cfg.tau is None:
        raise ConfigurationError("backtests need a quantile level; set tau in [estimation] or --tau")
    t, y1, y2, x1, x2 = read_panel(args.input, need_y2=True)
    w, step = cfg.backtest_window, max(1, cfg.backtest_step)
    if w < MIN_ROWS:
        raise ConfigurationError(f"[backtest] window must be at least {MIN_ROWS}, got {w}")
    n = y1.size
    if n <= w:
        raise CliError(EXIT_TOO_SHORT, "too_short", f"backtest window {w} needs more than {w} rows, got {n}", field="window")
    ends = list(range(w, n, step))
    tasks = [(y1[e - w : e], y2[e - w : e], x1[e - w : e], x2[e - w : e], cfg, e) for e in ends]
    threads = _threads(args)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_window_forecast, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        out = [_window_forecast(task) for task in tasks]
    var = np.array([o[0] for o in out])
    covar = np.array([o[1] for o in out])
    realized = y1[ends]
    report = coverage_backtest(var, realized, cfg.tau)
    lines = ["t,var,covar,y1,y2,hit"]
    for e, v, c in zip(ends, var, covar):
        tt = int(t[e]) if t[e].is_integer() else repr(float(t[e]))
        lines.append(f"{tt},{v!r},{c!r},{y1[e]!r},{y2[e]!r},{int(y1[e] <= v)}")
    atomic_write(os.path.join(args.out, "forecasts.csv"), "\r\n".join(lines) + "\r\n")
    path = os.path.join(args.out, "backtest.csv")
    atomic_write(path, report.to_csv())
    return [
        f"{report.n} one-step VaR forecasts at tau={report.tau}: hit rate {report.hit_rate:.4f} "
        f"(z={report.z_score:.2f})",
        f"-> {path}",
    ]


def cmd_experiment(args, cfg):
    if cfg.experiment is None:
        raise ConfigurationError("the config has no [experiment] section")
    runner = {
        "size": run_size_experiment,
        "power": run_power_experiment,
        "distribution": run_distribution_check,
    }[cfg.experiment_kind]
    report = runner(cfg.experiment, workers=_threads(args))
    atomic_write(os.path.join(args.out, "report.csv"), report.to_csv())
    atomic_write(os.path.join(args.out, "report.txt"), report.to_text())
    return report.to_text().rstrip("\n").splitlines() + [f"-> {os.path.join(args.out, 'report.csv')}"]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-var": cmd_fit_var,
    "fit-covar": cmd_fit_covar,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "experiment": cmd_experiment,
}
NEEDS_INPUT = {"fit-var", "fit-covar", "forecast", "backtest"}


def _tau_arg(text):
    if text.strip().lower() == MEAN:
        return MEAN
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"tau must lie in (0, 1) or be 'mean', got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ivxq", description="IVX quantile predictive regressions for VaR and CoVaR."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--input", metavar="PATH", help="wide CSV with t, y1, y2, x1_*, x2_*")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("--seed", type=int, metavar="U64", help="override the master seed")
    common.add_argument("--tau", type=_tau_arg, metavar="F", help="quantile level, or 'mean'")
    common.add_argument("--threads", type=int, metavar="N", help="worker processes (env IVXQ_THREADS)")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stdout")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "simulate": "simulate the two-block system to CSV",
        "fit-var": "fit the first-stage VaR regression",
        "fit-covar": "fit both stages with naive and corrected covariances",
        "forecast": "one-step-ahead VaR and CoVaR",
        "backtest": "rolling-window VaR coverage backtest",
        "experiment": "run a Monte Carlo size, power or distribution experiment",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _error(code, kind, message, field=None):
    body = {"schema_version": SCHEMA_VERSION, "error": {"code": code, "type": kind, "message": message}}
    if field is not None:
        body["error"]["field"] = field
    sys.stderr.write(json.dumps(body) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command in NEEDS_INPUT and not args.input:
            raise CliError(EXIT_USAGE, "usage", f"{args.command} requires --input", field="--input")
        if not os.path.isdir(args.out):
            try:
                os.makedirs(args.out, exist_ok=True)
            except OSError as exc:
                raise CliError(EXIT_IO, "io", f"cannot create {args.out}: {exc.strerror}", field="--out")
        if not os.access(args.out, os.W_OK):
            raise CliError(EXIT_IO, "io", f"output directory {args.out} is not writable", field="--out")
        cfg = _run_config(args)
        lines = COMMANDS[args.command](args, cfg)
    except CliError as exc:
        return _error(exc.code, exc.kind, str(exc), exc.field)
    except InputDataError as exc:
        return _error(EXIT_INPUT, "input", str(exc), exc.field)
    except ConfigurationError as exc:
        return _error(EXIT_CONFIG, "config", str(exc))
    except InsufficientTailDataError as exc:
        return _error(EXIT_TOO_SHORT, "too_short", str(exc))
    except CollinearityError as exc:
        return _error(EXIT_ESTIMATION, "collinearity", str(exc), exc.column)
    except (SingularDesignError, ConvergenceError) as exc:
        return _error(EXIT_ESTIMATION, "estimation", str(exc))
    except ExperimentFailure as exc:
        return _error(EXIT_EXPERIMENT, "experiment", str(exc))
    except IvxqError as exc:
        return _error(EXIT_ESTIMATION, "estimation", str(exc))
    except OSError as exc:
        return _error(EXIT_IO, "io", str(exc))
    if not args.quiet:
        print("\n".join(lines))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
