"""Scoring functions for the (VaR, CoVaR) pair, M-estimators and backtests."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientTailDataError
from .quantreg import fit_qr

__all__ = [
    "ScorePair",
    "BacktestReport",
    "s_var",
    "s_covar",
    "score_pair",
    "m_estimate_var",
    "m_estimate_covar",
    "coverage_backtest",
]

COVAR_VARIANTS = ("c-x", "c-y")


def _check_level(level, name):
    if not 0.0 < level < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {level}")


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def s_var(v, x, beta_level):
    """VaR score ``(1{x <= v} - beta)(v - x)``.

    Equals the check loss at level ``beta`` of ``x - v``, so it is
    nonnegative and zero at ``x == v``.
    """
    _check_level(beta_level, "beta_level")
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    return _out(((x <= v) - beta_level) * (v - x))


def s_covar(v, c, x, y, alpha_level, variant="c-x"):
    """CoVaR score gated on the VaR exceedance ``x > v``.

    ``variant="c-x"`` returns ``1{x > v}(1{y <= c} - alpha)(c - x)``;
    ``variant="c-y"`` uses ``(c - y)`` in the last factor, which makes the
    gated term a check loss in ``y``.
    """
    _check_level(alpha_level, "alpha_level")
    if variant not in COVAR_VARIANTS:
        raise ValueError(f"variant must be one of {COVAR_VARIANTS}, got {variant!r}")
    v, c, x, y = (np.asarray(a, dtype=float) for a in (v, c, x, y))
    gap = c - x if variant == "c-x" else c - y
    gate = x > v
    return _out(np.where(gate, ((y <= c) - alpha_level) * gap, 0.0))


@dataclass(frozen=True)
class ScorePair:
    s_var: float
    s_covar: float


def score_pair(v, c, x, y, tau, alpha=None, variant="c-x"):
    """Mean of both score coordinates over the sample."""
    alpha = tau if alpha is None else alpha
    return ScorePair(
        s_var=float(np.mean(s_var(v, x, tau))),
        s_covar=float(np.mean(s_covar(v, c, x, y, alpha, variant))),
    )


def _design(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != n:
        raise ValueError(f"x has {x.shape[0]} rows but the response has {n}")
    return np.hstack([np.ones((n, 1)), x])


def m_estimate_var(y, x, tau):
    """Minimize the mean VaR score over linear forecasts ``theta'(1, x)``.

    The VaR score is the check loss, so this is a quantile regression.
    """
    y = np.asarray(y, dtype=float).ravel()
    return fit_qr(_design(x, y.shape[0]), y, tau).coef


def m_estimate_covar(y2, y1, x, stage1_coef, tau, alpha=None):
    """CoVaR coefficients with the VaR model held fixed.

    The gated score vanishes off the exceedances ``y1 > v``, and on them its
    check-loss form (``c - y`` variant) is minimized by a quantile regression
    of ``y2`` on ``(1, x)`` restricted to those rows.

    Raises
    ------
    InsufficientTailDataError
        With fewer than ``k + 5`` exceedances.
    """
    alpha = tau if alpha is None else alpha
    _check_level(alpha, "alpha")
    y2 = np.asarray(y2, dtype=float).ravel()
    y1 = np.asarray(y1, dtype=float).ravel()
    n = y2.shape[0]
    if y1.shape[0] != n:
        raise ValueError(f"y1 has {y1.shape[0]} rows but y2 has {n}")
    X = _design(x, n)
    stage1_coef = np.asarray(stage1_coef, dtype=float).ravel()
    if stage1_coef.shape[0] != X.shape[1]:
        raise ValueError(f"stage1_coef needs {X.shape[1]} entries, got {stage1_coef.shape[0]}")
    gate = y1 > X @ stage1_coef
    k = X.shape[1]
    count = int(gate.sum())
    if count < k + 5:
        raise InsufficientTailDataError(f"{count} exceedances; need at least {k + 5}")
    return fit_qr(X[gate], y2[gate], alpha).coef


@dataclass(frozen=True)
class BacktestReport:
    n: int
    tau: float
    hits: int
    hit_rate: float
    z_score: float
    mean_score: float

    def within_band(self, width=2.0):
        """Whether the hit rate lies within ``width`` binomial standard errors of ``tau``."""
        se = math.sqrt(self.tau * (1.0 - self.tau) / self.n)
        return abs(self.hit_rate - self.tau) <= width * se

    def to_dict(self):
        return {
            "n": self.n,
            "tau": self.tau,
            "hits": self.hits,
            "hit_rate": self.hit_rate,
            "z_score": self.z_score,
            "mean_score": self.mean_score,
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        row = self.to_dict()
        w.writerow(list(row))
        w.writerow([repr(v) if isinstance(v, float) else v for v in row.values()])
        return buf.getvalue()


def coverage_backtest(forecasts, realized, tau):
    """Unconditional coverage of quantile forecasts.

    A hit is ``realized <= forecast``. The z-score compares the hit count
    with its binomial mean ``n tau``.
    """
    _check_level(tau, "tau")
    f = np.asarray(forecasts, dtype=float).ravel()
    r = np.asarray(realized, dtype=float).ravel()
    if f.shape != r.shape:
        raise ValueError(f"forecasts and realized differ in length ({f.size} vs {r.size})")
    n = f.size
    if n == 0:
        raise ValueError("empty backtest sample")
    hits = int(np.sum(r <= f))
    z = (hits - n * tau) / math.sqrt(n * tau * (1.0 - tau))
    return BacktestReport(
        n=n,
        tau=float(tau),
        hits=hits,
        hit_rate=hits / n,
        z_score=float(z),
        mean_score=float(np.mean(s_var(f, r, tau))),
    )
