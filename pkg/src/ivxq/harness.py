"""Monte Carlo size, power and distribution experiments.

A cell is one ``(n, c, tau)`` combination. Every replication of a cell draws
its innovations from the counter stream ``(seed, cell, replication)``, so the
alternatives evaluated within a cell share their noise and the results do not
depend on how replications are spread over worker processes.
"""
from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .dgp import DgpConfig, simulate_predictive_system
from .exceptions import ConfigurationError, ExperimentFailure, IvxqError
from .ivx import IvxConfig, ivx_ols_estimate, ivx_qr_estimate, ols_estimate, wald_test
from .quantreg import fit_qr, qr_covariance
from .twostage import stage1_var, stage2_covar

__all__ = [
    "TESTS",
    "ExperimentConfig",
    "CellResult",
    "ExperimentReport",
    "run_size_experiment",
    "run_power_experiment",
    "run_distribution_check",
]

TESTS = ("ivx_wald_beta", "ols_wald_beta", "delta_wald_naive", "delta_wald_corrected")
MAX_FAILURE_SHARE = 0.02


@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo design.

    ``tau_grid`` entries of ``None`` run the conditional-mean version of the
    test. ``alternatives`` are local slopes ``b`` mapped to
    ``b / n**((1 + gamma_z) / 2)`` for slope tests and ``b / sqrt(n)`` for
    the fitted-VaR loading, or raw coefficient values when
    ``alternative_kind == "fixed"``. ``null_value`` is the hypothesized value
    of the tested coefficient; size experiments also set the truth to it.
    """

    dgp: DgpConfig = field(default_factory=DgpConfig)
    test: str = "ivx_wald_beta"
    n_grid: tuple = (1000,)
    c_grid: Optional[tuple] = (0.0, 5.0, 20.0)
    tau_grid: tuple = (None,)
    B: int = 1000
    nominal_level: float = 0.05
    alternatives: tuple = ()
    alternative_kind: str = "local"
    null_value: float = 0.0
    ivx: IvxConfig = field(default_factory=IvxConfig)
    workers: int = 1

    def __post_init__(self):
        if self.test not in TESTS:
            raise ConfigurationError(f"test must be one of {TESTS}, got {self.test!r}")
        if self.B < 100:
            raise ConfigurationError(f"B must be at least 100, got {self.B}")
        if not 0.0 < self.nominal_level < 1.0:
            raise ConfigurationError("nominal_level must lie in (0, 1)")
        if self.alternative_kind not in ("local", "fixed"):
            raise ConfigurationError("alternative_kind must be 'local' or 'fixed'")
        if not self.n_grid:
            raise ConfigurationError("n_grid is empty")
        for tau in self.tau_grid:
            if tau is not None and not 0.0 < tau < 1.0:
                raise ConfigurationError(f"tau {tau} outside (0, 1)")
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be at least 1")

    @property
    def tests_delta(self):
        return self.test.startswith("delta")

    def cells(self):
        """``(index, n, c, tau)`` in report order."""
        c_grid = self.c_grid if self.c_grid is not None else (None,)
        out = []
        for n in self.n_grid:
            for c in c_grid:
                for tau in self.tau_grid:
                    out.append((len(out), int(n), c, tau))
        return out

    def coefficient(self, alternative, n):
        if alternative is None:
            return float(self.null_value)
        if self.alternative_kind == "fixed":
            return float(alternative)
        rate = math.sqrt(n) if self.tests_delta else n ** ((1.0 + self.ivx.gamma_z) / 2.0)
        return float(self.null_value) + float(alternative) / rate


@dataclass(frozen=True)
class CellResult:
    test: str
    n: int
    c: Optional[float]
    tau: Optional[float]
    alternative: Optional[float]
    true_value: float
    replications: int
    failures: int
    rejection: float
    mc_se: float
    coverage: float
    coverage_se: float
    ks: float
    t_mean: float
    t_sd: float
    monotone: Optional[bool] = None


CSV_FIELDS = (
    "test", "n", "c", "tau", "alternative", "true_value", "replications", "failures",
    "rejection_rate", "mc_se", "coverage", "coverage_se", "ks", "t_mean", "t_sd", "monotone",
)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Per-cell results; ``tstats`` maps a cell position to its t-ratios."""

    kind: str
    cells: tuple
    tstats: dict
    seed: int
    elapsed: float = 0.0

    def rows(self):
        for cell in self.cells:
            tau = "mean" if cell.tau is None else cell.tau
            yield (
                cell.test, cell.n, cell.c, tau, cell.alternative, cell.true_value,
                cell.replications, cell.failures, cell.rejection, cell.mc_se, cell.coverage,
                cell.coverage_se, cell.ks, cell.t_mean, cell.t_sd, cell.monotone,
            )

    def to_csv(self):
        """CSV with one row per cell; contains no timing, so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(CSV_FIELDS)
        for row in self.rows():
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_text(self):
        head = f"{'test':<22}{'n':>6}{'c':>7}{'tau':>7}{'alt':>8}{'reject':>9}{'mcse':>8}{'cover':>8}{'ks':>8}{'fail':>6}"
        lines = [f"{self.kind} experiment, seed {self.seed}", head, "-" * len(head)]
        for cell in self.cells:
            c = "-" if cell.c is None else f"{cell.c:g}"
            tau = "mean" if cell.tau is None else f"{cell.tau:g}"
            alt = "-" if cell.alternative is None else f"{cell.alternative:g}"
            mono = "" if cell.monotone in (None, True) else "  not monotone"
            lines.append(
                f"{cell.test:<22}{cell.n:>6}{c:>7}{tau:>7}{alt:>8}{cell.rejection:>9.4f}"
                f"{cell.mc_se:>8.4f}{cell.coverage:>8.4f}{cell.ks:>8.4f}{cell.failures:>6}{mono}"
            )
        return "\n".join(lines) + "\n"

    def cell(self, **match):
        """The unique cell whose fields equal ``match``."""
        found = [c for c in self.cells if all(getattr(c, k) == v for k, v in match.items())]
        if len(found) != 1:
            raise KeyError(f"{len(found)} cells match {match}")
        return found[0]


def _with_persistence(dgp, c):
    if c is None:
        return dgp
    lur = replace(dgp.lur, c=(float(c),) * dgp.lur.p)
    lur2 = None if dgp.lur2 is None else replace(dgp.lur2, c=(float(c),) * dgp.lur2.p)
    return replace(dgp, lur=lur, lur2=lur2)


def _with_truth(cfg, dgp, value):
    if cfg.tests_delta:
        return replace(dgp, delta=value)
    return replace(dgp, beta=(value,) * dgp.lur.p)


def _slope_test(cfg, y, x, tau):
    """Estimate, covariance and the index block of the slope coefficients."""
    p = x.shape[1]
    if cfg.test == "ivx_wald_beta":
        fit = ivx_ols_estimate(y, x, cfg.ivx) if tau is None else ivx_qr_estimate(y, x, cfg.ivx, tau)
        return fit.coef, fit.covariance
    if tau is None:
        fit = ols_estimate(y, x, cfg.ivx)
        return fit.coef, fit.covariance
    X = np.hstack([np.ones((x.shape[0], 1)), x])
    qfit = fit_qr(X, y, tau)
    return qfit.coef[1 : 1 + p], qr_covariance(qfit, X)[1 : 1 + p, 1 : 1 + p]


def _one_replication(cfg, dgp, n, tau, replication, cell_index, truth):
    system = simulate_predictive_system(
        dgp, n, tau=0.5 if tau is None else tau, cell=cell_index, replication=replication
    )
    x1, x2 = system.lagged()
    if cfg.tests_delta:
        st1 = stage1_var(system.y1, x1, tau, cfg.ivx)
        fit = stage2_covar(system.y2, x2, st1, tau, cfg.ivx)
        cov = fit.corrected_cov if cfg.test == "delta_wald_corrected" else fit.naive_cov
        est = fit.coef2[-1:]
        cov = cov[-1:, -1:]
    else:
        est, cov = _slope_test(cfg, system.y1, x1, tau)
    wald = wald_test(est, cov, r=np.full(est.size, cfg.null_value))
    se = math.sqrt(cov[0, 0])
    if not se > 0.0:
        raise IvxqError("nonpositive standard error")
    t_null = (est[0] - cfg.null_value) / se
    t_truth = (est[0] - truth) / se
    return wald.p_value < cfg.nominal_level, t_null, t_truth


def _run_chunk(task):
    cfg, dgps, truths, n, tau, cell_index, reps = task
    out = []
    for rep in reps:
        row = []
        for dgp, truth in zip(dgps, truths):
            try:
                row.append(_one_replication(cfg, dgp, n, tau, rep, cell_index, truth))
            except (IvxqError, np.linalg.LinAlgError, FloatingPointError):
                row.append(None)
        out.append(row)
    return out


def _resolve_workers(workers):
    env = os.environ.get("IVXQ_THREADS")
    if workers is None and env:
        workers = int(env)
    return max(1, int(workers or 1))


def _summarize(cfg, cell_spec, alt, truth, results, keep_t):
    _, n, c, tau = cell_spec
    good = [r for r in results if r is not None]
    failures = len(results) - len(good)
    if failures > MAX_FAILURE_SHARE * len(results):
        raise ExperimentFailure(
            f"{failures} of {len(results)} replications failed in cell n={n}, c={c}, tau={tau}"
        )
    m = len(good)
    rej = float(np.mean([g[0] for g in good]))
    t_null = np.array([g[1] for g in good])
    t_truth = np.array([g[2] for g in good])
    crit = stats.norm.ppf(1.0 - cfg.nominal_level / 2.0)
    cover = float(np.mean(np.abs(t_truth) <= crit))
    cell = CellResult(
        test=cfg.test,
        n=n,
        c=None if c is None else float(c),
        tau=tau,
        alternative=None if alt is None else float(alt),
        true_value=truth,
        replications=m,
        failures=failures,
        rejection=rej,
        mc_se=math.sqrt(rej * (1.0 - rej) / m),
        coverage=cover,
        coverage_se=math.sqrt(cover * (1.0 - cover) / m),
        ks=float(stats.kstest(t_truth, "norm").statistic),
        t_mean=float(t_truth.mean()),
        t_sd=float(t_truth.std(ddof=1)),
    )
    return cell, (t_truth if keep_t else None)


def _run(cfg, kind, alternatives, keep_t, workers=None):
    start = time.perf_counter()
    workers = _resolve_workers(cfg.workers if workers is None else workers)
    specs = cfg.cells()
    tasks = []
    meta = []
    chunk = max(1, math.ceil(cfg.B / (4 * workers)))
    for spec in specs:
        index, n, c, tau = spec
        base = _with_persistence(cfg.dgp, c)
        truths = [cfg.coefficient(a, n) for a in alternatives]
        dgps = [_with_truth(cfg, base, t) for t in truths]
        # validate the design once in the parent so errors surface early
        for d in dgps:
            d.lur.root(n)
        starts = range(0, cfg.B, chunk)
        meta.append((spec, truths, len(tasks), len(starts)))
        for s in starts:
            tasks.append((cfg, dgps, truths, n, tau, index, range(s, min(s + chunk, cfg.B))))

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_chunk, tasks))
    else:
        chunks = [_run_chunk(t) for t in tasks]

    cells = []
    tstats = {}
    for spec, truths, first, count in meta:
        rows = [row for ch in chunks[first : first + count] for row in ch]
        group = []
        for j, (alt, truth) in enumerate(zip(alternatives, truths)):
            cell, t = _summarize(cfg, spec, alt, truth, [r[j] for r in rows], keep_t)
            if t is not None:
                tstats[len(cells) + len(group)] = t
            group.append(cell)
        if kind == "power":
            group = _annotate_monotone(group)
        cells.extend(group)
    return ExperimentReport(
        kind=kind,
        cells=tuple(cells),
        tstats=tstats,
        seed=int(cfg.dgp.seed),
        elapsed=time.perf_counter() - start,
    )


def _annotate_monotone(group):
    """Flag each cell whose rejection falls more than 2 MC s.e. below an earlier, smaller |b|."""
    order = sorted(range(len(group)), key=lambda j: abs(group[j].alternative or 0.0))
    out = list(group)
    best = None
    for j in order:
        cell = group[j]
        ok = True
        if best is not None:
            ok = cell.rejection >= best.rejection - 2.0 * max(cell.mc_se, best.mc_se)
        out[j] = replace(cell, monotone=ok)
        if best is None or cell.rejection > best.rejection:
            best = cell
    return out


def run_size_experiment(cfg, workers=None):
    """Rejection rates with the tested coefficient at its hypothesized value."""
    if cfg.alternatives:
        raise ConfigurationError("size experiments take no alternatives")
    return _run(cfg, "size", (None,), keep_t=False, workers=workers)


def run_power_experiment(cfg, workers=None):
    """Rejection rates along the alternative grid, annotated for monotonicity."""
    if not cfg.alternatives:
        raise ConfigurationError("power experiments need an alternative grid")
    return _run(cfg, "power", tuple(cfg.alternatives), keep_t=False, workers=workers)


def run_distribution_check(cfg, workers=None):
    """Null t-ratios per cell with their KS distance from the standard normal."""
    return _run(cfg, "distribution", (None,), keep_t=True, workers=workers)
