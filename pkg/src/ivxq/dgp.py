"""Simulation of local-to-unity predictive systems.

Two regressor blocks are simulated, each with its own innovation stream::

    x_{j,t} = R_n x_{j,t-1} + v_{j,t},   R_n = I - diag(c) / n**gamma
    v_{j,t} = sum_k F_k e_{j,t-k}

and the two responses are

    y_{1,t} = mu + beta' x_{1,t-1} + u_{1,t}
    y_{2,t} = mu + beta2' x_{2,t-1} + delta * q_{1,t}(tau) + u_{2,t}

where ``q_{1,t}(tau)`` is the true conditional tau-quantile of ``y_{1,t}``.
Within a block, ``(u_t, e_t')`` has covariance ``innovation_cov``; a negative
correlation between ``u_t`` and ``e_t`` is what makes the regressors
endogenous. The recursion starts from a zero state and the first ``burn_in``
steps are discarded; ``R_n`` always uses the retained sample size ``n``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special, stats

from . import kernels
from .exceptions import ConfigurationError
from .rng import stream

__all__ = [
    "Gaussian",
    "StudentT",
    "GaussianMixture",
    "parse_error_dist",
    "default_innovation_cov",
    "LurConfig",
    "DgpConfig",
    "SimulatedSystem",
    "linear_process_filter",
    "simulate_lur",
    "simulate_predictive_system",
    "assemble_system",
    "quantile_shift",
]


# ----------------------------------------------------------------------------
# Error laws
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """Standard normal errors (scaled by the innovation standard deviation)."""

    def ppf(self, tau, scale=1.0):
        return scale * special.ndtri(tau)

    def from_normal(self, w_u, sd, mixing=None):
        return w_u

    def __str__(self):
        return "gaussian"


@dataclass(frozen=True)
class StudentT:
    """Student-t errors via a multivariate-t construction.

    The whole ``(u_t, e_t)`` vector is divided by a common ``sqrt(chi2/df)``
    draw, so ``u_t / sd_u`` is exactly ``t(df)``.
    """

    df: float = 3.0

    def __post_init__(self):
        if not self.df > 0:
            raise ConfigurationError(f"StudentT df must be positive, got {self.df}")

    def ppf(self, tau, scale=1.0):
        return scale * stats.t.ppf(tau, self.df)

    def from_normal(self, w_u, sd, mixing=None):
        return w_u * mixing

    def __str__(self):
        return f"t({self.df:g})"


@dataclass(frozen=True)
class GaussianMixture:
    """Two-component normal mixture; asymmetric when the components differ.

    Draws are produced through a Gaussian copula, which keeps the
    rank correlation with the regressor innovations.
    """

    weight: float = 0.8
    loc1: float = 0.0
    scale1: float = 1.0
    loc2: float = -2.0
    scale2: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.weight < 1.0 or self.scale1 <= 0 or self.scale2 <= 0:
            raise ConfigurationError(f"invalid mixture parameters: {self}")

    def cdf(self, x):
        return self.weight * special.ndtr((x - self.loc1) / self.scale1) + (
            1.0 - self.weight
        ) * special.ndtr((x - self.loc2) / self.scale2)

    def _inverse(self, prob):
        prob = np.asarray(prob, dtype=float)
        lo = np.minimum(self.loc1 - 40 * self.scale1, self.loc2 - 40 * self.scale2)
        hi = np.maximum(self.loc1 + 40 * self.scale1, self.loc2 + 40 * self.scale2)
        lo = np.full(prob.shape, lo)
        hi = np.full(prob.shape, hi)
        # bisection: 80 halvings of an 80-sd bracket reach machine precision
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < prob
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def ppf(self, tau, scale=1.0):
        out = self._inverse(tau)
        return scale * (float(out) if np.ndim(out) == 0 else out)

    def from_normal(self, w_u, sd, mixing=None):
        return sd * self._inverse(special.ndtr(w_u / sd))

    def __str__(self):
        return (
            f"mixture({self.weight:g},{self.loc1:g},{self.scale1:g},"
            f"{self.loc2:g},{self.scale2:g})"
        )


def parse_error_dist(text):
    """Parse ``gaussian``, ``t(3)`` or ``mixture(w,m1,s1,m2,s2)``."""
    s = str(text).strip().lower().replace(" ", "")
    if s in ("gaussian", "normal"):
        return Gaussian()
    for prefix in ("t(", "student_t(", "studentt("):
        if s.startswith(prefix) and s.endswith(")"):
            return StudentT(float(s[len(prefix) : -1]))
    if s.startswith("mixture(") and s.endswith(")"):
        args = [float(a) for a in s[len("mixture(") : -1].split(",")]
        return GaussianMixture(*args)
    raise ConfigurationError(f"unknown error distribution {text!r}")


# ----------------------------------------------------------------------------
# Configurations
# ----------------------------------------------------------------------------


def default_innovation_cov(p, rho=-0.95):
    """Unit-variance covariance of ``(u, e_1..e_p)`` with corr(u, e_i) = rho.

    The regressor innovations are ``e_i = rho * u + sqrt(1 - rho**2) * eta_i``,
    which makes them mutually correlated at ``rho**2``.
    """
    cov = np.full((p + 1, p + 1), rho**2)
    cov[0, 1:] = cov[1:, 0] = rho
    np.fill_diagonal(cov, 1.0)
    return cov


@dataclass(frozen=True, eq=False)
class LurConfig:
    """Local-to-unity regressor block."""

    p: int = 1
    c: tuple = (0.0,)
    gamma: float = 1.0
    filter_weights: Optional[tuple] = None
    innovation_cov: Optional[np.ndarray] = None
    burn_in: int = 50

    def __post_init__(self):
        if int(self.p) < 1:
            raise ConfigurationError("p must be a positive integer")
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if c.size == 1 and self.p > 1:
            c = np.repeat(c, self.p)
        if c.shape != (self.p,):
            raise ConfigurationError(f"c must have {self.p} entries, got {c.size}")
        if np.any(c < 0):
            raise ConfigurationError("persistence coefficients c must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if int(self.burn_in) < 0:
            raise ConfigurationError("burn_in must be nonnegative")
        object.__setattr__(self, "c", tuple(float(v) for v in c))

        weights = self.filter_weights
        if weights is None:
            weights = (np.eye(self.p),)
        weights = tuple(np.atleast_2d(np.asarray(w, dtype=float)) for w in weights)
        if not weights:
            raise ConfigurationError("filter_weights must be nonempty")
        for w in weights:
            if w.shape != (self.p, self.p):
                raise ConfigurationError(
                    f"filter weights must be {self.p}x{self.p}, got {w.shape}"
                )
        if not np.array_equal(weights[0], np.eye(self.p)):
            raise ConfigurationError("the first filter weight F_0 must be the identity")
        object.__setattr__(self, "filter_weights", weights)

        cov = self.innovation_cov
        cov = default_innovation_cov(self.p) if cov is None else np.asarray(cov, dtype=float)
        if cov.shape != (self.p + 1, self.p + 1):
            raise ConfigurationError(
                f"innovation_cov must be {(self.p + 1, self.p + 1)}, got {cov.shape}"
            )
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ConfigurationError("innovation_cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ConfigurationError("innovation_cov must be positive definite")
        object.__setattr__(self, "innovation_cov", cov)

    def root(self, n):
        """Diagonal of ``R_n = I - C / n**gamma`` for sample size ``n``."""
        shrink = np.asarray(self.c) / float(n) ** self.gamma
        if np.any(shrink > 1.0):
            raise ConfigurationError(
                f"c / n**gamma = {shrink.max():.4g} > 1 gives a negative root at n={n}"
            )
        return 1.0 - shrink


@dataclass(frozen=True, eq=False)
class DgpConfig:
    """Full two-block predictive system.

    ``beta2`` defaults to ``beta`` and ``lur2`` to ``lur``. ``cross_corr``
    correlates the standardized draws of the two blocks; zero keeps them on
    independent streams.
    """

    lur: LurConfig = field(default_factory=LurConfig)
    mu: float = 0.0
    beta: tuple = (0.0,)
    delta: float = 0.0
    error_dist: object = field(default_factory=Gaussian)
    seed: int = 0
    beta2: Optional[tuple] = None
    lur2: Optional[LurConfig] = None
    cross_corr: float = 0.0

    def __post_init__(self):
        p = self.lur.p
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.shape != (p,):
            raise ConfigurationError(f"beta must have {p} entries")
        object.__setattr__(self, "beta", tuple(beta.tolist()))
        lur2 = self.lur if self.lur2 is None else self.lur2
        object.__setattr__(self, "lur2", lur2)
        beta2 = beta if self.beta2 is None else np.atleast_1d(np.asarray(self.beta2, float))
        if beta2.shape != (lur2.p,):
            raise ConfigurationError(f"beta2 must have {lur2.p} entries")
        object.__setattr__(self, "beta2", tuple(beta2.tolist()))
        if isinstance(self.error_dist, str):
            object.__setattr__(self, "error_dist", parse_error_dist(self.error_dist))
        if not -1.0 < self.cross_corr < 1.0:
            raise ConfigurationError("cross_corr must lie in (-1, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class SimulatedSystem:
    """One draw of the two-block system.

    ``x1[t]`` is the regressor dated ``t``; ``y1[t]`` loads on the previous
    row, so the value before the first row is kept in ``x1_init``. The
    innovations cover the burn-in as well.
    """

    y1: np.ndarray
    y2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x1_init: np.ndarray
    x2_init: np.ndarray
    q1: np.ndarray
    tau: float
    innovations: dict

    @property
    def n(self):
        return self.y1.shape[0]

    def lagged(self):
        """Regressors aligned with the responses: row t holds x_{t-1}."""
        x1 = np.vstack([self.x1_init[None, :], self.x1[:-1]])
        x2 = np.vstack([self.x2_init[None, :], self.x2[:-1]])
        return x1, x2

    def to_csv(self, fh=None):
        """Write ``t, y1, y2, x1_1..x1_p, x2_1..x2_p`` rows; returns text if no handle."""
        own = fh is None
        fh = io.StringIO() if own else fh
        writer = csv.writer(fh, lineterminator="\r\n")
        p1, p2 = self.x1.shape[1], self.x2.shape[1]
        writer.writerow(
            ["t", "y1", "y2"]
            + [f"x1_{i + 1}" for i in range(p1)]
            + [f"x2_{i + 1}" for i in range(p2)]
        )
        for t in range(self.n):
            row = [t + 1, self.y1[t], self.y2[t], *self.x1[t], *self.x2[t]]
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return fh.getvalue() if own else None


# ----------------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------------


def linear_process_filter(e, weights):
    """Return ``v_t = sum_j F_j e_{t-j}`` with zero pre-sample values."""
    e = np.asarray(e, dtype=float)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] < 1:
        raise ConfigurationError("innovations must have at least one row")
    weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in weights]
    if not weights:
        raise ConfigurationError("weights must be nonempty")
    shape = weights[0].shape
    if any(w.shape != shape for w in weights) or shape[1] != e.shape[1]:
        raise ConfigurationError(
            f"filter weights {[w.shape for w in weights]} do not match innovations "
            f"with {e.shape[1]} columns"
        )
    return kernels.linear_filter(e, np.stack(weights))


def _lur_path(cfg, n, v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != (n + cfg.burn_in, cfg.p):
        raise ConfigurationError(
            f"innovations must be {(n + cfg.burn_in, cfg.p)}, got {v.shape}"
        )
    return kernels.ar_recursion(v, cfg.root(n))


def simulate_lur(cfg, n, innovations):
    """Run the local-to-unity recursion and drop the burn-in rows.

    ``innovations`` are the ``v_t`` (already filtered), with
    ``n + cfg.burn_in`` rows.
    """
    return _lur_path(cfg, n, innovations)[cfg.burn_in :]


def quantile_shift(u, tau, dist, scale=1.0):
    """Center ``u`` at its tau-quantile: ``u - F^{-1}(tau)``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return np.asarray(u, dtype=float) - dist.ppf(tau, scale)


def _draw_block(cfg_lur, dist, g, mixing):
    """Map standard normal draws ``g`` (T, p+1) to ``(u, e)``."""
    chol = np.linalg.cholesky(cfg_lur.innovation_cov)
    w = g @ chol.T
    sd_u = np.sqrt(cfg_lur.innovation_cov[0, 0])
    if mixing is not None:
        w_e = w[:, 1:] * mixing[:, None]
    else:
        w_e = w[:, 1:]
    u = dist.from_normal(w[:, 0], sd_u, mixing)
    return np.ascontiguousarray(u), np.ascontiguousarray(w_e)


def assemble_system(cfg, n, tau, innovations):
    """Build the responses and regressors from retained innovations.

    ``innovations`` holds ``u1, e1, u2, e2`` with ``n + burn_in`` rows each.
    """
    blocks = []
    for lur, key in ((cfg.lur, "1"), (cfg.lur2, "2")):
        v = linear_process_filter(innovations["e" + key], lur.filter_weights)
        path = _lur_path(lur, n, v)
        b = lur.burn_in
        init = path[b - 1] if b > 0 else np.zeros(lur.p)
        x = path[b:]
        xlag = np.vstack([init[None, :], x[:-1]])
        blocks.append((x, init, xlag, innovations["u" + key][b:]))
    (x1, x1_init, x1lag, u1), (x2, x2_init, x2lag, u2) = blocks

    sd_u1 = np.sqrt(cfg.lur.innovation_cov[0, 0])
    mean1 = cfg.mu + x1lag @ np.asarray(cfg.beta)
    q1 = mean1 + cfg.error_dist.ppf(tau, sd_u1)
    y1 = mean1 + u1
    y2 = cfg.mu + x2lag @ np.asarray(cfg.beta2) + cfg.delta * q1 + u2
    return SimulatedSystem(
        y1=y1,
        y2=y2,
        x1=x1,
        x2=x2,
        x1_init=x1_init,
        x2_init=x2_init,
        q1=q1,
        tau=float(tau),
        innovations=innovations,
    )


def simulate_predictive_system(cfg, n, tau=0.5, cell=0, replication=0):
    """Simulate one replication of the two-block system.

    The draws come from the counter-based stream
    ``(cfg.seed, cell, replication, block)``, so the result is a pure
    function of its arguments.
    """
    if n < 2:
        raise ConfigurationError("n must be at least 2")
    if not 0.0 < tau < 1.0:
        raise ConfigurationError(f"tau must lie in (0, 1), got {tau}")
    draws = []
    for block, lur in ((1, cfg.lur), (2, cfg.lur2)):
        rng = stream(cfg.seed, cell, replication, block)
        total = n + lur.burn_in
        g = rng.standard_normal((total, lur.p + 1))
        if isinstance(cfg.error_dist, StudentT):
            mixing = np.sqrt(cfg.error_dist.df / rng.chisquare(cfg.error_dist.df, total))
        else:
            mixing = None
        draws.append((g, mixing))

    kappa = cfg.cross_corr
    if kappa != 0.0:
        g1, g2 = draws[0][0], draws[1][0]
        if g1.shape != g2.shape:
            raise ConfigurationError("cross_corr requires blocks of equal shape")
        draws[1] = (kappa * g1 + np.sqrt(1.0 - kappa**2) * g2, draws[1][1])

    innovations = {}
    for (g, mixing), lur, key in zip(draws, (cfg.lur, cfg.lur2), ("1", "2")):
        u, e = _draw_block(lur, cfg.error_dist, g, mixing)
        innovations["u" + key] = u
        innovations["e" + key] = e
    return assemble_system(cfg, n, tau, innovations)
