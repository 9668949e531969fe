"""Linear quantile regression.

``fit_qr`` runs a Frisch-Newton interior-point method on the dual linear
program, moves to a nearby vertex, and then pivots along edges of the
piecewise-linear objective until no edge direction descends. The returned
solution is therefore basic: ``k`` observations are interpolated exactly and
the subgradient condition holds at those points.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from . import kernels
from .exceptions import ConvergenceError, DegenerateSparsityWarning, SingularDesignError

__all__ = [
    "QuantileFit",
    "check_loss",
    "psi",
    "fit_qr",
    "sparsity_estimate",
    "hall_sheather_bandwidth",
    "qr_covariance",
]

SPARSITY_FLOOR = 1e-6


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")


def check_loss(u, tau):
    """Check loss ``u * (tau - 1{u < 0})``; scalar in, scalar out."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


def psi(u, tau):
    """Quantile score ``tau - 1{u < 0}``, equal to ``tau`` at zero."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    out = tau - (u < 0).astype(float)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class QuantileFit:
    """Result of :func:`fit_qr`.

    ``residuals`` at the basis observations are stored as exact zeros and
    ``objective`` is the check loss summed over the stored residuals.
    The sparsity ``f(0)`` is estimated lazily from the residuals.
    """

    tau: float
    coef: np.ndarray
    residuals: np.ndarray
    objective: float
    design_dim: tuple
    basis: np.ndarray
    iterations: dict

    @cached_property
    def sparsity(self):
        return sparsity_estimate(self.residuals, self.tau)


def _bound(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1e20
    return float(np.min(-v[neg] / dv[neg]))


def _frisch_newton(X, y, tau, max_iter, tol):
    """Primal-dual path-following on the bounded dual LP.

    Dual: max -y'a s.t. X'a = (1 - tau) X'1, 0 <= a <= 1. The coefficient
    vector is minus the equality multiplier. Returns ``(coef, iters, gap)``.
    """
    n, k = X.shape
    step = 0.99995
    A = X.T
    c = -y
    b = (1.0 - tau) * X.sum(axis=0)
    x = np.full(n, 1.0 - tau)
    s = 1.0 - x
    dual = np.linalg.lstsq(X, c, rcond=None)[0]
    r = c - X @ dual
    r = r + 0.001 * (r == 0)
    z = np.where(r > 0, r, 0.0)
    w = z - r
    gap = c @ x - dual @ b + w.sum()
    scale = max(1.0, float(np.abs(y).sum()))
    it = 0
    while gap > tol * scale and it < max_iter:
        it += 1
        q = 1.0 / (z / x + w / s)
        r = z - w
        AQ = A * q
        M = AQ @ X
        rhs = q * r
        dy = np.linalg.solve(M, A @ rhs)
        dx = q * (X @ dy - r)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(step * min(_bound(x, dx), _bound(s, ds)), 1.0)
        fd = min(step * min(_bound(w, dw), _bound(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2.0 * n)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            rhs = rhs + q * (dxdz - dsdw - xi)
            dy = np.linalg.solve(M, A @ rhs)
            dx = q * (X @ dy + xi - r - dxdz + dsdw)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz
            dw = mu * sinv - w - sinv * w * ds - dsdw
            fp = min(step * min(_bound(x, dx), _bound(s, ds)), 1.0)
            fd = min(step * min(_bound(w, dw), _bound(z, dz)), 1.0)
        x = x + fp * dx
        s = s + fp * ds
        dual = dual + fd * dy
        w = w + fd * dw
        z = z + fd * dz
        gap = c @ x - dual @ b + w.sum()
        if not np.isfinite(gap):
            break
    return -dual, it, float(gap)


def _initial_basis(X, residuals):
    """Pick the k observations with smallest |residual| that span the design."""
    n, k = X.shape
    order = np.argsort(np.abs(residuals), kind="stable")
    chosen = []
    for t in order:
        trial = chosen + [int(t)]
        if np.linalg.matrix_rank(X[trial]) == len(trial):
            chosen = trial
            if len(chosen) == k:
                break
    if len(chosen) < k:
        raise SingularDesignError("design matrix is rank deficient")
    return np.array(sorted(chosen))


def _pivot_to_optimum(X, y, tau, basis, max_pivots):
    """Edge-following descent from a vertex.

    Ties (nonbasic zero residuals) are broken by a fixed symbolic
    perturbation ``y + eps * p``: a zero residual takes the sign of its
    perturbed residual, and breakpoints are ordered lexicographically by
    ``(r / g, rho / g)``. The perturbed objective strictly decreases on every
    pivot, so the descent cannot cycle, and an optimal basis for the
    perturbed problem is optimal for the original one.
    """
    n, k = X.shape
    perturb = np.random.default_rng(0x5EED).standard_normal(n)
    ytol = 1e-12 * max(1.0, float(np.abs(y).max()))
    for pivot in range(max_pivots + 1):
        Xh = X[basis]
        Xh_inv = np.linalg.inv(Xh)
        coef = Xh_inv @ y[basis]
        r = y - X @ coef
        rho = perturb - X @ (Xh_inv @ perturb[basis])
        G = X @ Xh_inv
        r[basis] = 0.0
        rho[basis] = 0.0
        G[basis] = 0.0
        zero = np.abs(r) <= ytol
        zero[basis] = False
        negative = np.where(zero, rho < 0, r < 0)
        w = -(tau - negative)
        w[basis] = 0.0
        lin = w @ G
        slopes = np.concatenate([lin + (1.0 - tau), -lin + tau])
        tol = 1e-10 * (1.0 + np.abs(G).sum(axis=0))
        scaled = slopes / np.concatenate([tol, tol])
        best = int(np.argmin(scaled))
        if scaled[best] >= -1.0:
            r[zero] = 0.0
            return coef, r, basis, pivot
        if pivot == max_pivots:
            break
        j = best % k
        sign = 1.0 if best < k else -1.0
        g = sign * G[:, j]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = np.where(zero, 0.0, r / g)
            lam2 = rho / g
        nz = g != 0
        nz[basis] = False
        cand = nz & ((lam > 0) | ((lam == 0) & (lam2 > 0)))
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            raise ConvergenceError(
                "unbounded edge in quantile regression",
                {"pivot": pivot, "slope": float(slopes[best])},
            )
        order = idx[np.lexsort((lam2[idx], lam[idx]))]
        running = slopes[best] + np.cumsum(np.abs(g[order]))
        crossed = running >= 0
        if not crossed.any():
            raise ConvergenceError(
                "objective decreases past every breakpoint",
                {"pivot": pivot, "slope": float(running[-1])},
            )
        entering = int(order[np.argmax(crossed)])
        basis = basis.copy()
        basis[j] = entering
        basis.sort()
    raise ConvergenceError(
        f"quantile regression did not reach a vertex optimum in {max_pivots} pivots",
        {"pivots": max_pivots, "min_slope": float(slopes.min())},
    )


def fit_qr(X, y, tau, max_iter=200, tol=1e-8, max_pivots=None):
    """Minimize ``sum rho_tau(y - X b)`` over ``b``.

    Parameters
    ----------
    X : ndarray, shape (n, k)
        Design matrix; include a column of ones for an intercept.
    y : ndarray, shape (n,)
    tau : float
        Quantile level in (0, 1).
    max_iter : int
        Interior-point iteration cap.
    tol : float
        Relative duality-gap tolerance of the interior-point phase.
    max_pivots : int, optional
        Cap on vertex pivots after the interior-point phase; defaults to
        ``10 * n``.

    Raises
    ------
    SingularDesignError
        ``X`` does not have full column rank or ``n <= k``.
    ConvergenceError
        The pivoting phase hit its cap.
    """
    _check_tau(tau)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]}")
    if n <= k:
        raise SingularDesignError(f"need n > k, got n={n}, k={k}")
    if np.linalg.matrix_rank(X) < k:
        raise SingularDesignError("design matrix is rank deficient")

    coef0, ip_iters, gap = _frisch_newton(X, y, tau, max_iter, tol)
    if not np.all(np.isfinite(coef0)):
        coef0 = np.linalg.lstsq(X, y, rcond=None)[0]
    basis = _initial_basis(X, y - X @ coef0)
    if max_pivots is None:
        max_pivots = 10 * n
    coef, resid, basis, pivots = _pivot_to_optimum(X, y, tau, basis, max_pivots)
    objective = kernels.check_loss_sum(resid, tau)
    return QuantileFit(
        tau=float(tau),
        coef=coef,
        residuals=resid,
        objective=objective,
        design_dim=(n, k),
        basis=basis,
        iterations={"interior_point": ip_iters, "gap": gap, "pivots": pivots},
    )


def hall_sheather_bandwidth(n, tau, alpha=0.05):
    """Hall-Sheather bandwidth for the sparsity difference quotient."""
    x0 = special.ndtri(tau)
    f0 = np.exp(-0.5 * x0**2) / np.sqrt(2.0 * np.pi)
    z = special.ndtri(1.0 - alpha / 2.0)
    return n ** (-1.0 / 3.0) * z ** (2.0 / 3.0) * (1.5 * f0**2 / (2.0 * x0**2 + 1.0)) ** (1.0 / 3.0)


def sparsity_estimate(residuals, tau, n=None):
    """Density of the residuals at their tau-quantile.

    Difference quotient of empirical residual quantiles at ``tau +/- h`` with
    the Hall-Sheather bandwidth ``h``. Degenerate spreads return
    ``SPARSITY_FLOOR`` with a :class:`DegenerateSparsityWarning`.
    """
    _check_tau(tau)
    residuals = np.asarray(residuals, dtype=float).ravel()
    n = residuals.size if n is None else int(n)
    if n < 20:
        raise ValueError(f"sparsity estimation needs n >= 20, got {n}")
    h = hall_sheather_bandwidth(n, tau)
    lo = max(tau - h, 0.5 / n)
    hi = min(tau + h, 1.0 - 0.5 / n)
    qlo, qhi = np.quantile(residuals, [lo, hi])
    spread = qhi - qlo
    if not np.isfinite(spread) or spread <= 0.0:
        warnings.warn(
            "residual quantile spread is zero; sparsity clipped", DegenerateSparsityWarning
        )
        return SPARSITY_FLOOR
    return max((hi - lo) / spread, SPARSITY_FLOOR)


def qr_covariance(fit, X, sparsity=None):
    """``tau (1 - tau) / f(0)**2 * (X'X)^{-1}`` for an i.i.d. error design."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    f0 = fit.sparsity if sparsity is None else float(sparsity)
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < xtx.shape[0]:
        raise SingularDesignError("X'X is singular")
    cov = fit.tau * (1.0 - fit.tau) / f0**2 * np.linalg.inv(xtx)
    return 0.5 * (cov + cov.T)
