"""Two-stage VaR/CoVaR estimation with a generated regressor.

Stage 1 fits the conditional VaR of ``y1`` on lagged ``x1`` and builds the
fitted series. Stage 2 regresses ``y2`` on an intercept, lagged ``x2`` and
the fitted VaR, instrumenting ``x2`` with its IVX filter and the fitted VaR
with itself.

Both stages are linear moment problems ``sum_t W_t score_t = 0`` with
Jacobian ``B = s W'X`` (``s`` is the sparsity in quantile mode and one in
mean mode). Estimating the stage-1 coefficients perturbs the stage-2
moment through the fitted VaR; the corrected covariance adds the variance
of that perturbation to the usual sandwich meat::

    meat = naive_meat + [g' (x) L] (sum_t nu_t nu_t' (x) Z1_t Z1_t') [g (x) L']

with ``g`` the stage-2 loading on the fitted VaR, ``nu_t`` the stage-1
scores, ``Z1_t`` the stage-1 instruments and ``L = s2 W'X1 B1^{-1}`` the
map from stage-1 scores to stage-2 moments.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import CollinearityError, SingularDesignError
from .ivx import (
    COND_LIMIT,
    IvxConfig,
    WaldResult,
    build_instrument,
    demean,
    ivx_ols_estimate,
    ivx_qr_core,
    wald_test,
)
from .quantreg import psi

__all__ = [
    "Stage1Fit",
    "TwoStageFit",
    "RiskForecastPair",
    "DeltaWald",
    "LinearDecomposition",
    "stage1_var",
    "stage2_covar",
    "corrected_covariance",
    "correction_meat",
    "delta_wald",
    "forecast_pair",
    "linear_twostage_oracle",
]


def _as_matrix(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _sandwich(Binv, meat):
    cov = Binv @ meat @ Binv.T
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class Stage1Fit:
    """First-stage fit and the fitted VaR series.

    ``generated[t] = params[0] + x1[t] @ params[1:]`` where row ``t`` of
    ``x1`` holds the regressor dated ``t - 1``. ``scores`` are the per
    observation stage-1 scores (``psi`` of the residual in quantile mode,
    the residual itself in mean mode), ``instruments`` and ``design`` the
    stage-1 ``W1`` and ``X1`` and ``jacobian`` their ``B1``.
    """

    qr_ivx: object
    generated: np.ndarray
    tau: Optional[float]
    params: np.ndarray
    scores: np.ndarray
    instruments: np.ndarray
    design: np.ndarray
    jacobian: np.ndarray
    mode: str = "quantile"

    @property
    def intercept(self):
        return float(self.params[0])

    @property
    def coef(self):
        return self.params[1:]

    def predict(self, x_latest):
        x_latest = np.atleast_1d(np.asarray(x_latest, dtype=float))
        if x_latest.shape != self.coef.shape:
            raise ValueError(
                f"expected {self.coef.size} stage-1 regressors, got shape {x_latest.shape}"
            )
        return float(self.intercept + x_latest @ self.coef)


@dataclass(frozen=True, eq=False)
class TwoStageFit:
    """Second-stage fit with naive and corrected covariances.

    ``coef2`` is ``(intercept, slopes on x2, loading on the fitted VaR)``.
    """

    stage1: Stage1Fit
    coef2: np.ndarray
    instruments2: np.ndarray
    design2: np.ndarray
    naive_cov: np.ndarray
    corrected_cov: np.ndarray
    residuals2: np.ndarray
    jacobian2: np.ndarray
    naive_meat: np.ndarray
    scale2: float
    tau: Optional[float]
    mode: str
    names: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def delta(self):
        return float(self.coef2[-1])

    @property
    def intercept(self):
        return float(self.coef2[0])

    @property
    def slopes(self):
        return self.coef2[1:-1]

    def to_dict(self):
        """Coefficients, both covariances and the delta tests as plain types."""
        tests = delta_wald(self)
        se_n = np.sqrt(np.diag(self.naive_cov))
        se_c = np.sqrt(np.diag(self.corrected_cov))
        return {
            "mode": self.mode,
            "tau": self.tau,
            "n": int(self.design2.shape[0]),
            "stage1": {
                "names": ["intercept"] + [f"x1_{j + 1}" for j in range(self.stage1.coef.size)],
                "coef": self.stage1.params.tolist(),
            },
            "stage2": {
                "names": list(self.names),
                "coef": self.coef2.tolist(),
                "se_naive": se_n.tolist(),
                "se_corrected": se_c.tolist(),
                "naive_cov": self.naive_cov.tolist(),
                "corrected_cov": self.corrected_cov.tolist(),
            },
            "delta_test": {
                "corrected": _wald_dict(tests.corrected),
                "naive": _wald_dict(tests.naive),
            },
        }

    def to_csv(self):
        """One row per stage-2 coefficient."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "estimate", "se_naive", "se_corrected"])
        se_n = np.sqrt(np.diag(self.naive_cov))
        se_c = np.sqrt(np.diag(self.corrected_cov))
        for name, est, a, b in zip(self.names, self.coef2, se_n, se_c):
            w.writerow([name, repr(float(est)), repr(float(a)), repr(float(b))])
        return buf.getvalue()


def _wald_dict(res):
    return {"statistic": res.statistic, "df": res.df, "p_value": res.p_value}


@dataclass(frozen=True)
class RiskForecastPair:
    var_forecast: float
    covar_forecast: float
    tau: Optional[float]
    index: Optional[int] = None

    def to_dict(self):
        return {
            "index": self.index,
            "tau": self.tau,
            "var": self.var_forecast,
            "covar": self.covar_forecast,
        }


@dataclass(frozen=True)
class DeltaWald:
    corrected: WaldResult
    naive: WaldResult


def stage1_var(y1, x1, tau=0.5, ivx_cfg=None):
    """Fit the first stage and build the fitted VaR series.

    Parameters
    ----------
    y1 : ndarray, shape (n,)
    x1 : ndarray, shape (n, p)
        Lagged regressors aligned with ``y1``; ``p`` may be zero, giving an
        intercept-only fit whose fitted series is a sample quantile.
    tau : float or None
        Quantile level. ``None`` fits the conditional mean instead.
    ivx_cfg : IvxConfig, optional

    Returns
    -------
    Stage1Fit
    """
    cfg = IvxConfig() if ivx_cfg is None else ivx_cfg
    y1 = np.asarray(y1, dtype=float).ravel()
    x1 = _as_matrix(x1)
    n, p = x1.shape
    if y1.shape[0] != n:
        raise ValueError(f"y1 has {y1.shape[0]} rows but x1 has {n}")
    if n <= p + 2:
        raise SingularDesignError(f"stage 1 needs n > p + 2, got n={n}, p={p}")
    X1 = np.hstack([np.ones((n, 1)), x1])
    if tau is None:
        if p == 0:
            raise SingularDesignError("mean mode needs at least one regressor")
        fit = ivx_ols_estimate(y1, x1, cfg)
        params = np.concatenate([[fit.intercept], fit.coef])
        z = build_instrument(x1, cfg, x0=x1[0])
        W1 = np.hstack([np.ones((n, 1)), z])
        B1 = W1.T @ X1
        scores = y1 - X1 @ params
        mode = "mean"
    else:
        fit = ivx_qr_core(y1, x1, None, cfg, tau)
        params = fit.params
        W1 = fit.instrument_design
        B1 = fit.jacobian
        scores = psi(y1 - X1 @ params, tau)
        mode = "quantile"
    generated = X1 @ params
    return Stage1Fit(
        qr_ivx=fit,
        generated=generated,
        tau=None if tau is None else float(tau),
        params=params,
        scores=scores,
        instruments=W1,
        design=X1,
        jacobian=B1,
        mode=mode,
    )


def _check_collinear(X, names):
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        j = int(np.flatnonzero(norms == 0)[-1])
        raise CollinearityError(
            f"stage-2 column '{names[j]}' is identically zero", condition_number=np.inf, column=names[j]
        )
    scaled = X / norms
    cond = np.linalg.cond(scaled)
    if np.isfinite(cond) and cond <= COND_LIMIT:
        return
    rel = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        others = np.delete(scaled, j, axis=1)
        coef = np.linalg.lstsq(others, scaled[:, j], rcond=None)[0]
        rel[j] = np.linalg.norm(scaled[:, j] - others @ coef)
    # among the (near-)dependent columns report the last, so the fitted VaR
    # is named when it is the culprit
    worst = int(np.flatnonzero(rel <= max(rel.min() * 1e3, 1e-12))[-1])
    raise CollinearityError(
        f"stage-2 column '{names[worst]}' is collinear with the other regressors "
        f"(condition number {cond:.3g})",
        condition_number=cond,
        column=names[worst],
    )


def stage2_covar(y2, x2, stage1, tau=None, ivx_cfg=None):
    """Fit the second stage on the fitted VaR and compute both covariances.

    Parameters
    ----------
    y2 : ndarray, shape (n,)
    x2 : ndarray, shape (n, p2)
        Lagged stage-2 regressors aligned with ``y2``.
    stage1 : Stage1Fit
        Fitted on a sample of the same length.
    tau : float, optional
        Defaults to the stage-1 level. Mean-mode stage 1 fits the mean here too.
    ivx_cfg : IvxConfig, optional
    """
    cfg = IvxConfig() if ivx_cfg is None else ivx_cfg
    y2 = np.asarray(y2, dtype=float).ravel()
    x2 = _as_matrix(x2)
    n, p = x2.shape
    g = stage1.generated
    if y2.shape[0] != n or g.shape[0] != n:
        raise ValueError(
            f"stage-2 data has {y2.shape[0]} responses and {n} regressor rows; "
            f"stage 1 has {g.shape[0]}"
        )
    tau = stage1.tau if tau is None else float(tau)
    if (tau is None) != (stage1.mode == "mean"):
        raise ValueError("stage 2 must use the same mode (mean or quantile) as stage 1")
    names = ("intercept",) + tuple(f"x2_{j + 1}" for j in range(p)) + ("generated",)
    X = np.hstack([np.ones((n, 1)), x2, g[:, None]])
    _check_collinear(X, names)

    if tau is None:
        z = build_instrument(x2, cfg, x0=x2[0])
        W = np.hstack([np.ones((n, 1)), z, g[:, None]])
        B = W.T @ X
        cond = np.linalg.cond(B)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise CollinearityError(
                f"stage-2 moment matrix is near-singular (condition number {cond:.3g})",
                condition_number=cond,
            )
        theta = np.linalg.solve(B, W.T @ y2)
        resid = y2 - X @ theta
        ols = np.linalg.lstsq(X, y2, rcond=None)[0]
        eps = y2 - X @ ols
        naive_meat = (W * (eps**2)[:, None]).T @ W
        scale2 = 1.0
        diagnostics = {}
    else:
        fit = ivx_qr_core(y2, x2, g, cfg, tau)
        theta = fit.params
        resid = fit.residuals
        W = fit.instrument_design
        B = fit.jacobian
        naive_meat = tau * (1.0 - tau) * (W.T @ W)
        scale2 = float(fit.sparsity)
        diagnostics = dict(fit.diagnostics)
        diagnostics["sparsity"] = scale2

    Binv = np.linalg.inv(B)
    naive_cov = _sandwich(Binv, naive_meat)
    extra = _correction_from_parts(theta[-1], stage1.scores, stage1, W, scale2)
    corrected_cov = _sandwich(Binv, naive_meat + extra)
    return TwoStageFit(
        stage1=stage1,
        coef2=theta,
        instruments2=W,
        design2=X,
        naive_cov=naive_cov,
        corrected_cov=corrected_cov,
        residuals2=resid,
        jacobian2=B,
        naive_meat=naive_meat,
        scale2=scale2,
        tau=tau,
        mode=stage1.mode,
        names=names,
        diagnostics=diagnostics,
    )


def correction_meat(gamma, L, nu, Z1):
    """Generated-regressor term ``[g' (x) L](sum nu nu' (x) Z1 Z1')[g (x) L']``.

    Evaluated as ``sum_t (g'nu_t)^2 (L Z1_t)(L Z1_t)'`` using the mixed
    product rule; the result is symmetric PSD by construction.

    Parameters
    ----------
    gamma : ndarray, shape (m,)
        Stage-2 loadings on the ``m`` generated regressors.
    L : ndarray, shape (k2, k1)
    nu : ndarray, shape (n, m)
    Z1 : ndarray, shape (n, k1)
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    nu = _as_matrix(nu)
    weight = nu @ gamma
    G = (Z1 @ np.asarray(L, dtype=float).T) * weight[:, None]
    out = G.T @ G
    return 0.5 * (out + out.T)


def _correction_from_parts(delta, scores, stage1, W, scale2):
    L = scale2 * (W.T @ stage1.design) @ np.linalg.inv(stage1.jacobian)
    return correction_meat([delta], L, scores, stage1.instruments)


def corrected_covariance(fit, stage1=None, scores=None):
    """Recompute the corrected covariance, optionally with other stage-1 scores.

    With ``scores`` all zero the result equals ``fit.naive_cov`` exactly.
    """
    stage1 = fit.stage1 if stage1 is None else stage1
    scores = stage1.scores if scores is None else np.asarray(scores, dtype=float)
    B = fit.jacobian2
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularDesignError(f"stage-2 Jacobian is singular (condition number {cond:.3g})")
    Binv = np.linalg.inv(B)
    extra = _correction_from_parts(fit.delta, scores, stage1, fit.instruments2, fit.scale2)
    return _sandwich(Binv, fit.naive_meat + extra)


def delta_wald(fit):
    """Wald tests of a zero loading on the fitted VaR, corrected and naive."""
    k = fit.coef2.size
    R = np.zeros((1, k))
    R[0, -1] = 1.0
    return DeltaWald(
        corrected=wald_test(fit.coef2, fit.corrected_cov, R),
        naive=wald_test(fit.coef2, fit.naive_cov, R),
    )


def forecast_pair(fit, x1_latest, x2_latest, index=None):
    """One-step-ahead VaR and CoVaR from the latest regressor values."""
    var = fit.stage1.predict(x1_latest)
    x2_latest = np.atleast_1d(np.asarray(x2_latest, dtype=float))
    if x2_latest.shape != fit.slopes.shape:
        raise ValueError(
            f"expected {fit.slopes.size} stage-2 regressors, got shape {x2_latest.shape}"
        )
    covar = fit.intercept + float(x2_latest @ fit.slopes) + fit.delta * var
    return RiskForecastPair(var_forecast=var, covar_forecast=covar, tau=fit.tau, index=index)


@dataclass(frozen=True, eq=False)
class LinearDecomposition:
    """Both sides of the linear two-step error decomposition.

    ``lhs`` is ``beta2_tilde - beta2``. ``rhs_general`` is
    ``-(delta_ols - delta) Sxz^{-1} sum(g z) + Sxz^{-1} sum(u2 z)`` and
    ``rhs_identical`` replaces the middle factor by the stage-1 slope, which
    is valid only when both stages share the regressors (``None`` otherwise).
    """

    lhs: np.ndarray
    rhs_general: np.ndarray
    rhs_identical: Optional[np.ndarray]
    beta2_tilde: np.ndarray
    delta_ols: float
    delta_term: np.ndarray
    noise_term: np.ndarray


def linear_twostage_oracle(y2, x2, stage1, beta2, delta, ivx_cfg=None, impose_delta=False):
    """Linear two-step estimate and its error decomposition.

    Step one regresses demeaned ``y2`` on the demeaned fitted series by least
    squares; step two applies IVX to the response net of that fit. The error
    ``u2`` is defined from the supplied true ``beta2`` and ``delta``. With
    ``impose_delta`` the true loading replaces the least-squares one.
    """
    cfg = IvxConfig() if ivx_cfg is None else ivx_cfg
    y2 = np.asarray(y2, dtype=float).ravel()
    x2 = _as_matrix(x2)
    beta2 = np.atleast_1d(np.asarray(beta2, dtype=float))
    yb = demean(y2)
    xb = demean(x2)
    gb = demean(stage1.generated)
    z = build_instrument(x2, cfg, x0=x2[0])

    delta_ols = float(delta) if impose_delta else float(gb @ yb / (gb @ gb))
    y_tilde = yb - delta_ols * gb
    Sxz = xb.T @ z
    beta2_tilde = np.linalg.solve(Sxz.T, z.T @ y_tilde)

    u2 = yb - xb @ beta2 - delta * gb
    spread = np.linalg.solve(Sxz.T, z.T @ gb)
    delta_term = -(delta_ols - delta) * spread
    noise_term = np.linalg.solve(Sxz.T, z.T @ u2)

    x1 = stage1.design[:, 1:]
    identical = x1.shape == x2.shape and np.array_equal(x1, x2)
    rhs_identical = -(delta_ols - delta) * stage1.coef + noise_term if identical else None
    return LinearDecomposition(
        lhs=beta2_tilde - beta2,
        rhs_general=delta_term + noise_term,
        rhs_identical=rhs_identical,
        beta2_tilde=beta2_tilde,
        delta_ols=delta_ols,
        delta_term=delta_term,
        noise_term=noise_term,
    )
