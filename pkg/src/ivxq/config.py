"""INI configuration files for simulations, fits and experiments.

Sections: ``[dgp]``, ``[dgp.lur]``, ``[dgp.lur2]`` (optional), ``[ivx]``,
``[estimation]``, ``[experiment]`` and ``[backtest]``. Lists are comma
separated. Matrices separate rows with ``;`` and, for filter weights,
consecutive matrices with ``|``. A ``tau`` of ``mean`` selects the
conditional-mean estimators.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dgp import DgpConfig, LurConfig, default_innovation_cov, parse_error_dist
from .exceptions import ConfigurationError
from .harness import ExperimentConfig
from .ivx import IvxConfig

__all__ = ["RunConfig", "load_config", "parse_config", "dump_config"]


@dataclass(frozen=True, eq=False)
class RunConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    ivx: IvxConfig = field(default_factory=IvxConfig)
    tau: Optional[float] = 0.05
    n: int = 500
    experiment: Optional[ExperimentConfig] = None
    experiment_kind: str = "size"
    backtest_window: int = 250
    backtest_step: int = 1


def _floats(text):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _matrix(text):
    rows = [_floats(r) for r in str(text).split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigurationError(f"ragged matrix {text!r}")
    return np.array(rows, dtype=float)


def _tau(text):
    s = str(text).strip().lower()
    if s in ("mean", "none", ""):
        return None
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigurationError(f"tau must be a number or 'mean', got {text!r}") from exc


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    try:
        return conv(section[key])
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{section.name}] {key}: {exc}") from exc


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def _lur(section):
    p = _get(section, "p", int, 1)
    cov = _get(section, "innovation_cov", _matrix, None)
    if cov is None:
        cov = default_innovation_cov(p, _get(section, "endogeneity", float, -0.95))
    weights = _get(
        section, "filter_weights", lambda s: tuple(_matrix(m) for m in s.split("|")), None
    )
    return LurConfig(
        p=p,
        c=_get(section, "c", _floats, (0.0,)),
        gamma=_get(section, "gamma", float, 1.0),
        filter_weights=weights,
        innovation_cov=cov,
        burn_in=_get(section, "burn_in", int, 50),
    )


def parse_config(text):
    """Build a :class:`RunConfig` from INI text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from exc
    sec = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731

    d = sec("dgp")
    lur = _lur(sec("dgp.lur"))
    lur2 = _lur(sec("dgp.lur2")) if cp.has_section("dgp.lur2") else None
    dgp = DgpConfig(
        lur=lur,
        mu=_get(d, "mu", float, 0.0),
        beta=_get(d, "beta", _floats, (0.0,) * lur.p),
        delta=_get(d, "delta", float, 0.0),
        error_dist=_get(d, "error_dist", parse_error_dist, parse_error_dist("gaussian")),
        seed=_get(d, "seed", int, 0),
        beta2=_get(d, "beta2", _floats, None),
        lur2=lur2,
        cross_corr=_get(d, "cross_corr", float, 0.0),
    )

    v = sec("ivx")
    ivx = IvxConfig(
        c_z=_get(v, "c_z", float, 1.0),
        gamma_z=_get(v, "gamma_z", float, 0.95),
        demean=_get(v, "demean", _bool, True),
        finite_sample_correction=_get(v, "finite_sample_correction", _bool, False),
        demean_instrument=_get(v, "demean_instrument", _bool, False),
    )

    est = sec("estimation")
    tau = _get(est, "tau", _tau, 0.05)
    n = _get(est, "n", int, 500)

    experiment = None
    kind = "size"
    ex = sec("experiment")
    if ex is not None:
        kind = _get(ex, "kind", str, "size").strip()
        if kind not in ("size", "power", "distribution"):
            raise ConfigurationError(f"[experiment] kind must be size, power or distribution, got {kind!r}")
        c_grid = _get(ex, "c_grid", _floats, (0.0, 5.0, 20.0))
        experiment = ExperimentConfig(
            dgp=dgp,
            test=_get(ex, "test", str, "ivx_wald_beta").strip(),
            n_grid=tuple(int(x) for x in _get(ex, "n_grid", _floats, (float(n),))),
            c_grid=c_grid or None,
            tau_grid=_get(ex, "tau_grid", lambda s: tuple(_tau(t) for t in s.split(",")), (tau,)),
            B=_get(ex, "B", int, 1000),
            nominal_level=_get(ex, "nominal_level", float, 0.05),
            alternatives=_get(ex, "alternatives", _floats, ()),
            alternative_kind=_get(ex, "alternative_kind", str, "local").strip(),
            null_value=_get(ex, "null_value", float, 0.0),
            ivx=ivx,
            workers=_get(ex, "workers", int, 1),
        )

    bt = sec("backtest")
    return RunConfig(
        dgp=dgp,
        ivx=ivx,
        tau=tau,
        n=n,
        experiment=experiment,
        experiment_kind=kind,
        backtest_window=_get(bt, "window", int, 250),
        backtest_step=_get(bt, "step", int, 1),
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _list(values):
    return ", ".join(repr(float(v)) for v in values)


def _mat(m):
    return "; ".join(_list(row) for row in np.atleast_2d(m))


def _lur_section(lur):
    return {
        "p": str(lur.p),
        "c": _list(lur.c),
        "gamma": repr(float(lur.gamma)),
        "burn_in": str(lur.burn_in),
        "innovation_cov": _mat(lur.innovation_cov),
        "filter_weights": " | ".join(_mat(w) for w in lur.filter_weights),
    }


def dump_config(cfg):
    """Serialize a :class:`RunConfig` back to INI text."""
    cp = configparser.ConfigParser(interpolation=None)
    d = cfg.dgp
    cp["dgp"] = {
        "seed": str(d.seed),
        "mu": repr(float(d.mu)),
        "beta": _list(d.beta),
        "beta2": _list(d.beta2),
        "delta": repr(float(d.delta)),
        "error_dist": str(d.error_dist),
        "cross_corr": repr(float(d.cross_corr)),
    }
    cp["dgp.lur"] = _lur_section(d.lur)
    if d.lur2 is not d.lur:
        cp["dgp.lur2"] = _lur_section(d.lur2)
    v = cfg.ivx
    cp["ivx"] = {
        "c_z": repr(float(v.c_z)),
        "gamma_z": repr(float(v.gamma_z)),
        "demean": str(v.demean).lower(),
        "finite_sample_correction": str(v.finite_sample_correction).lower(),
        "demean_instrument": str(v.demean_instrument).lower(),
    }
    cp["estimation"] = {"tau": "mean" if cfg.tau is None else repr(float(cfg.tau)), "n": str(cfg.n)}
    e = cfg.experiment
    if e is not None:
        cp["experiment"] = {
            "kind": cfg.experiment_kind,
            "test": e.test,
            "n_grid": ", ".join(str(n) for n in e.n_grid),
            "c_grid": "" if e.c_grid is None else _list(e.c_grid),
            "tau_grid": ", ".join("mean" if t is None else repr(float(t)) for t in e.tau_grid),
            "B": str(e.B),
            "nominal_level": repr(float(e.nominal_level)),
            "alternatives": _list(e.alternatives),
            "alternative_kind": e.alternative_kind,
            "null_value": repr(float(e.null_value)),
            "workers": str(e.workers),
        }
    cp["backtest"] = {"window": str(cfg.backtest_window), "step": str(cfg.backtest_step)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
