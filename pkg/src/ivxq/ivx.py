"""IVX instrumentation and the IVX-corrected mean and quantile estimators.

All estimators take *aligned* data: ``y[t]`` is the response at ``t`` and
``x[t]`` the regressor dated ``t - 1``. The instrument filters the regressor
differences through a mildly integrated AR(1)::

    z_t = rho_z z_{t-1} + dx_t,   rho_z = 1 - c_z / n**gamma_z,   z_0 = 0

The estimators start the filter at the first observed regressor, so the
first difference is zero and no pre-sample level is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from . import kernels
from .exceptions import CollinearityError, ConfigurationError, SingularDesignError
from .quantreg import fit_qr, psi

__all__ = [
    "IvxConfig",
    "IvxFit",
    "WaldResult",
    "build_instrument",
    "demean",
    "ivx_ols_estimate",
    "ols_estimate",
    "ivx_wald",
    "wald_test",
    "ivx_qr_estimate",
]

COND_LIMIT = 1e10


@dataclass(frozen=True)
class IvxConfig:
    """Instrument and variance options.

    ``demean`` removes sample means from the response and the regressor.
    The instrument enters the score variance as built unless
    ``demean_instrument`` is set, which over-rejects badly for persistent,
    strongly endogenous regressors. ``finite_sample_correction`` subtracts
    ``n zbar zbar' * omega_fm`` from the score variance, where ``omega_fm``
    is the variance of the response error after projecting out the
    regressor innovations.
    """

    c_z: float = 1.0
    gamma_z: float = 0.95
    demean: bool = True
    finite_sample_correction: bool = False
    demean_instrument: bool = False

    def __post_init__(self):
        if not self.c_z > 0:
            raise ConfigurationError("c_z must be positive")
        if not 0.0 < self.gamma_z < 1.0:
            raise ConfigurationError("gamma_z must lie in (0, 1)")

    def rho(self, n):
        shrink = self.c_z / float(n) ** self.gamma_z
        if shrink >= 1.0:
            raise ConfigurationError(
                f"c_z / n**gamma_z = {shrink:.4g} >= 1 at n={n}; instrument root not in (0, 1)"
            )
        return 1.0 - shrink


@dataclass(frozen=True, eq=False)
class IvxFit:
    """An IVX fit.

    ``coef`` and ``covariance`` refer to the slope coefficients. Quantile fits
    also carry the full parameter vector ``(intercept, slopes, extra)`` in
    ``params`` with covariance ``params_cov``.
    """

    coef: np.ndarray
    intercept: float
    instruments: np.ndarray
    residuals: np.ndarray
    sigma2: float
    moment_xz: np.ndarray
    moment_zz: np.ndarray
    covariance: np.ndarray
    moment_zy: Optional[np.ndarray] = None
    tau: Optional[float] = None
    sparsity: Optional[float] = None
    params: Optional[np.ndarray] = None
    params_cov: Optional[np.ndarray] = None
    design: Optional[np.ndarray] = None
    instrument_design: Optional[np.ndarray] = None
    jacobian: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def tstat(self):
        return self.coef / np.sqrt(np.diag(self.covariance))


@dataclass(frozen=True, eq=False)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    restriction: tuple

    def rejects(self, level=0.05):
        return self.p_value < level


def _as_matrix(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def build_instrument(x, cfg=None, n=None, x0=None):
    """Filter the differences of ``x`` into the IVX instrument.

    ``x0`` is the observation preceding ``x[0]``; zero when not given.
    ``n`` fixes the sample size used in ``rho_z`` (defaults to ``len(x)``).
    """
    cfg = IvxConfig() if cfg is None else cfg
    x = _as_matrix(x)
    n = x.shape[0] if n is None else int(n)
    if n < 2:
        raise ConfigurationError("the instrument needs n >= 2")
    rho = cfg.rho(n)
    prev = np.zeros(x.shape[1]) if x0 is None else np.atleast_1d(np.asarray(x0, float))
    dx = np.diff(x, axis=0, prepend=prev[None, :])
    return kernels.ar_recursion(dx, np.full(x.shape[1], rho))


def demean(series):
    series = np.asarray(series, dtype=float)
    if series.shape[0] == 0:
        raise ValueError("cannot demean an empty series")
    return series - series.mean(axis=0)


def _checked_solve(A, b, what):
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise CollinearityError(
            f"{what} is near-singular (condition number {cond:.3g})", condition_number=cond
        )
    return np.linalg.solve(A, b)


def _variance_instrument(z, cfg):
    centre = cfg.demean and cfg.demean_instrument and not cfg.finite_sample_correction
    return demean(z) if centre else z


def _omega_fm(uhat, x):
    """Residual variance of u after projecting on the AR(1) regressor innovations."""
    lagged, current = x[:-1], x[1:]
    coef = np.linalg.lstsq(lagged, current, rcond=None)[0]
    vhat = current - lagged @ coef
    resid = np.column_stack([uhat[:-1], vhat])
    S = np.cov(resid, rowvar=False)
    s_uv = S[0, 1:]
    return float(S[0, 0] - s_uv @ np.linalg.solve(S[1:, 1:], s_uv))


def ivx_ols_estimate(y, x, cfg=None, instrument=None):
    """Conditional-mean IVX estimator with its Wald covariance.

    Parameters
    ----------
    y : ndarray, shape (n,)
    x : ndarray, shape (n, p)
        Regressor aligned with ``y`` (row t holds x_{t-1}).
    cfg : IvxConfig, optional
    instrument : ndarray, shape (n, p), optional
        Overrides the IVX instrument (e.g. ``demean(x)`` reproduces OLS).
    """
    cfg = IvxConfig() if cfg is None else cfg
    y = np.asarray(y, dtype=float).ravel()
    x = _as_matrix(x)
    n, p = x.shape
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows but x has {n}")
    if n <= p + 1:
        raise SingularDesignError(f"need n > p + 1, got n={n}, p={p}")

    xb = demean(x) if cfg.demean else x
    yb = demean(y) if cfg.demean else y
    z = build_instrument(x, cfg, x0=x[0]) if instrument is None else _as_matrix(instrument)
    zm = _variance_instrument(z, cfg)

    Sxz = xb.T @ zm
    Szy = zm.T @ yb
    coef = _checked_solve(Sxz.T, Szy, "sum x z'")

    ols = np.linalg.lstsq(xb, yb, rcond=None)[0]
    uhat = yb - xb @ ols
    sigma2 = float(uhat @ uhat) / (n - 1)
    Szz = zm.T @ zm
    meat = sigma2 * Szz
    if cfg.finite_sample_correction:
        zbar = zm.mean(axis=0)
        meat = meat - n * np.outer(zbar, zbar) * _omega_fm(uhat, x)
    bread = np.linalg.inv(Sxz.T)
    cov = bread @ meat @ bread.T
    cov = 0.5 * (cov + cov.T)
    return IvxFit(
        coef=coef,
        intercept=float(np.mean(y) - np.mean(x, axis=0) @ coef),
        instruments=zm,
        residuals=uhat,
        sigma2=sigma2,
        moment_xz=Sxz,
        moment_zz=Szz,
        covariance=cov,
        moment_zy=Szy,
    )


def ols_estimate(y, x, cfg=None):
    """Least squares with the homoskedastic covariance, as a self-instrumented IVX fit."""
    cfg = IvxConfig() if cfg is None else cfg
    x = _as_matrix(x)
    xb = demean(x) if cfg.demean else x
    plain = replace(cfg, finite_sample_correction=False, demean_instrument=False)
    return ivx_ols_estimate(y, x, plain, instrument=xb)


def wald_test(estimate, cov, R=None, r=None):
    """Wald statistic for ``R estimate = r``."""
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    k = estimate.size
    R = np.eye(k) if R is None else np.atleast_2d(np.asarray(R, dtype=float))
    r = np.zeros(R.shape[0]) if r is None else np.atleast_1d(np.asarray(r, dtype=float))
    if R.shape[1] != k or r.shape[0] != R.shape[0]:
        raise ValueError(f"restriction shapes {R.shape}, {r.shape} do not match {k} coefficients")
    if np.linalg.matrix_rank(R) < R.shape[0]:
        raise SingularDesignError("restriction matrix R must have full row rank")
    diff = R @ estimate - r
    middle = R @ np.asarray(cov, dtype=float) @ R.T
    if np.linalg.matrix_rank(middle) < middle.shape[0]:
        raise SingularDesignError("R V R' is singular")
    stat = float(diff @ np.linalg.solve(middle, diff))
    stat = max(stat, 0.0)
    q = R.shape[0]
    return WaldResult(statistic=stat, df=q, p_value=float(stats.chi2.sf(stat, q)), restriction=(R, r))


def ivx_wald(fit, R=None, r=None):
    """Wald test on the slope coefficients of an :class:`IvxFit`."""
    return wald_test(fit.coef, fit.covariance, R, r)


def _zblock_norm(W, resid, tau, rows, scale):
    return float(np.linalg.norm(W[:, rows].T @ psi(resid, tau)) * scale)


def ivx_qr_core(y, x, extra, cfg, tau, instrument=None, iterations=1):
    """IVX-corrected quantile regression with optional self-instrumented columns.

    The design is ``[1, x, extra]`` and the instruments ``[1, z, extra]``.
    Starting at the plain quantile regression fit, each iteration takes the
    linearized step ``theta += (f W'X)^{-1} W' psi(resid)``, halving it until
    the IVX moment ``|sum z psi|`` is no larger than before (no step is taken
    if ten halvings do not get there).
    """
    y = np.asarray(y, dtype=float).ravel()
    x = _as_matrix(x)
    n, p = x.shape
    extra = np.empty((n, 0)) if extra is None else _as_matrix(extra)
    if y.shape[0] != n or extra.shape[0] != n:
        raise ValueError("y, x and extra columns must have the same number of rows")
    z = build_instrument(x, cfg, x0=x[0]) if instrument is None else _as_matrix(instrument)
    zm = _variance_instrument(z, cfg)

    ones = np.ones((n, 1))
    X = np.hstack([ones, x, extra])
    W = np.hstack([ones, zm, extra])
    qr = fit_qr(X, y, tau)
    f0 = qr.sparsity
    B = f0 * (W.T @ X)
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise CollinearityError(
            f"IVX quantile moment matrix is near-singular (condition number {cond:.3g})",
            condition_number=cond,
        )
    zrows = slice(1, 1 + p)
    scale = float(n) ** (-(1.0 + cfg.gamma_z) / 2.0)
    theta = qr.coef.copy()
    resid = y - X @ theta
    start_norm = _zblock_norm(W, resid, tau, zrows, scale)
    norm = start_norm
    steps = []
    # nothing to correct without regressors
    for _ in range(int(iterations) if p else 0):
        direction = np.linalg.solve(B, W.T @ psi(resid, tau))
        accepted = 0.0
        h = 1.0
        for _ in range(11):
            cand = theta + h * direction
            cand_resid = y - X @ cand
            cand_norm = _zblock_norm(W, cand_resid, tau, zrows, scale)
            if cand_norm <= norm:
                theta, resid, norm, accepted = cand, cand_resid, cand_norm, h
                break
            h *= 0.5
        steps.append(accepted)
        if accepted == 0.0:
            break

    Binv = np.linalg.inv(B)
    WW = W.T @ W
    full_cov = tau * (1.0 - tau) * Binv @ WW @ Binv.T
    full_cov = 0.5 * (full_cov + full_cov.T)
    xb = demean(x)
    return IvxFit(
        coef=theta[1 : 1 + p],
        intercept=float(theta[0]),
        instruments=zm,
        residuals=resid,
        sigma2=float(np.var(resid)),
        moment_xz=xb.T @ zm,
        moment_zz=zm.T @ zm,
        covariance=full_cov[zrows, zrows],
        tau=float(tau),
        sparsity=float(f0),
        params=theta,
        params_cov=full_cov,
        design=X,
        instrument_design=W,
        jacobian=B,
        diagnostics={
            "qr_coef": qr.coef,
            "moment_norm_start": start_norm,
            "moment_norm": norm,
            "step_sizes": steps,
        },
    )


def ivx_qr_estimate(y, x, cfg=None, tau=0.5, instrument=None, iterations=1):
    """IVX quantile predictive regression of ``y`` on an intercept and ``x``."""
    cfg = IvxConfig() if cfg is None else cfg
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    return ivx_qr_core(y, x, None, cfg, tau, instrument=instrument, iterations=iterations)
