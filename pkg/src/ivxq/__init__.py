"""IVX-corrected quantile predictive regressions for the (VaR, CoVaR) pair.

The subpackages follow the estimation pipeline: :mod:`ivxq.dgp` simulates
local-to-unity systems, :mod:`ivxq.quantreg` fits linear quantile
regressions, :mod:`ivxq.ivx` adds the IVX instrument, :mod:`ivxq.twostage`
chains the VaR and CoVaR stages, :mod:`ivxq.scoring` scores and backtests
forecasts and :mod:`ivxq.harness` runs Monte Carlo experiments.
"""
from importlib import resources

from .dgp import DgpConfig, LurConfig, simulate_predictive_system
from .exceptions import (
    CollinearityError,
    ConfigurationError,
    ConvergenceError,
    DegenerateSparsityWarning,
    ExperimentFailure,
    InputDataError,
    InsufficientTailDataError,
    IvxqError,
    SingularDesignError,
)
from .ivx import IvxConfig, ivx_ols_estimate, ivx_qr_estimate, ivx_wald
from .kernels import BACKEND
from .quantreg import fit_qr
from .twostage import delta_wald, forecast_pair, stage1_var, stage2_covar

__version__ = "0.1.0"


def data_path(name):
    """Filesystem path of a bundled data file such as ``null_experiment.ini``."""
    return str(resources.files(__package__).joinpath("data", name))


__all__ = [
    "BACKEND",
    "CollinearityError",
    "ConfigurationError",
    "ConvergenceError",
    "DegenerateSparsityWarning",
    "DgpConfig",
    "ExperimentFailure",
    "InputDataError",
    "InsufficientTailDataError",
    "IvxConfig",
    "IvxqError",
    "LurConfig",
    "SingularDesignError",
    "data_path",
    "delta_wald",
    "fit_qr",
    "forecast_pair",
    "ivx_ols_estimate",
    "ivx_qr_estimate",
    "ivx_wald",
    "simulate_predictive_system",
    "stage1_var",
    "stage2_covar",
]
