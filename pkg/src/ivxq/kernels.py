"""Hot-loop kernels with backend selection at import time.

The compiled extension ``ivxq._kernels`` is used when it was built; otherwise
the numpy/scipy implementations in ``ivxq._kernels_py`` are used. Setting the
environment variable ``IVXQ_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("IVXQ_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

__all__ = ["BACKEND", "ar_recursion", "linear_filter", "check_loss_sum", "backends"]


def ar_recursion(v, rho):
    """Run ``x[t] = rho * x[t-1] + v[t]`` column-wise from a zero state.

    Parameters
    ----------
    v : ndarray, shape (n, p)
        Innovations.
    rho : ndarray, shape (p,)
        Per-column autoregressive roots.
    """
    v = np.ascontiguousarray(v, dtype=np.float64)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    return _impl.ar_recursion(v, rho)


def linear_filter(e, weights):
    """Convolve ``e`` with a finite list of matrix weights, zero pre-sample."""
    e = np.ascontiguousarray(e, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return _impl.linear_filter(e, weights)


def check_loss_sum(u, tau):
    return float(_impl.check_loss_sum(np.ascontiguousarray(u, dtype=np.float64), float(tau)))


def backends():
    """Return the available kernel implementations keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return out
    out["cython"] = _compiled
    return out
