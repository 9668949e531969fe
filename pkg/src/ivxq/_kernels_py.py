"""Numpy/scipy versions of the compiled kernels, used when the extension is absent."""
import numpy as np
from scipy.signal import lfilter


def ar_recursion(v, rho):
    v = np.ascontiguousarray(v, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(v.shape[1]):
        out[:, i] = lfilter([1.0], [1.0, -rho[i]], v[:, i])
    return out


def linear_filter(e, weights):
    e = np.asarray(e, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = e.shape[0]
    out = np.zeros((n, weights.shape[1]))
    for j in range(min(weights.shape[0], n)):
        out[j:] += e[: n - j] @ weights[j].T
    return out


def check_loss_sum(u, tau):
    u = np.asarray(u, dtype=np.float64)
    return float(np.sum(u * (tau - (u < 0))))
