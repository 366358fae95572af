"""Experiment configuration: JSON loading, validation and object construction.

Configs are plain JSON objects (matrices as nested arrays).  Validation is
strict: unknown keys are rejected and every error message names the dotted
path of the offending field.  The full schema is documented in
``docs/config_schema.md``.
"""

from __future__ import annotations

import json
from math import inf, log
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import (
    FiniteHMM,
    LinearGaussianSSM,
    ParametricSSM,
    StateSpaceModel,
    StochasticGrowthSSM,
)
from .smc_sampler import TemperedSequence
from .splitting import LevelProcess, random_walk_process
from .util import gaussian_logpdf

SUBCOMMANDS = ("simulate", "filter", "enkf", "smooth", "pmmh", "smc", "rare-event")


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown field: {where}.{name}" if where else f"unknown field: {name}")


def require(section: dict, key: str, where: str):
    if key not in section:
        field = f"{where}.{key}" if where else key
        raise ConfigError(f"missing required field: {field}")
    return section[key]


def _number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field {field} must be a number")
    return float(value)


def _int(value, field: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"field {field} must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"field {field} must be >= {minimum}")
    return value


def _matrix(section: dict, key: str, where: str) -> np.ndarray:
    raw = require(section, key, where)
    try:
        return np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"field {where}.{key} must be a numeric array") from None


def build_model(section: dict, where: str = "model") -> StateSpaceModel:
    """Construct a state-space model from its config dictionary."""
    kind = require(section, "kind", where)
    try:
        if kind == "linear_gaussian":
            check_keys(section, {"kind", "F", "V", "H", "R", "m0", "P0"}, where)
            return LinearGaussianSSM(
                F=_matrix(section, "F", where),
                V=_matrix(section, "V", where),
                H=_matrix(section, "H", where),
                R=_matrix(section, "R", where),
                m0=_matrix(section, "m0", where),
                P0=_matrix(section, "P0", where),
            )
        if kind == "finite_hmm":
            check_keys(section, {"kind", "init_probs", "trans_matrix", "emit"}, where)
            emit = require(section, "emit", where)
            emit_kind = require(emit, "kind", f"{where}.emit")
            if emit_kind == "gaussian":
                check_keys(emit, {"kind", "means", "sds"}, f"{where}.emit")
                return FiniteHMM.with_gaussian_emissions(
                    _matrix(section, "init_probs", where),
                    _matrix(section, "trans_matrix", where),
                    _matrix(emit, "means", f"{where}.emit"),
                    _matrix(emit, "sds", f"{where}.emit"),
                )
            if emit_kind == "categorical":
                check_keys(emit, {"kind", "emit_matrix"}, f"{where}.emit")
                return FiniteHMM.with_categorical_emissions(
                    _matrix(section, "init_probs", where),
                    _matrix(section, "trans_matrix", where),
                    _matrix(emit, "emit_matrix", f"{where}.emit"),
                )
            raise ConfigError(f"unknown emission kind in {where}.emit.kind: {emit_kind!r}")
        if kind == "stochastic_growth":
            check_keys(section, {"kind", "a", "b", "c", "trans_sd", "obs_sd", "init_sd"}, where)
            kwargs = {k: _number(section[k], f"{where}.{k}") for k in section if k != "kind"}
            return StochasticGrowthSSM(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc
    raise ConfigError(f"unknown model kind in {where}.kind: {kind!r}")


def build_parametric_model(section: dict, where: str = "pmmh.model") -> ParametricSSM:
    """Parametric model families for PMMH; currently a linear model with unknown F."""
    kind = require(section, "kind", where)
    if kind == "lg_unknown_F":
        check_keys(section, {"kind", "V", "H", "R", "m0", "P0", "prior"}, where)
        V = _matrix(section, "V", where)
        H = _matrix(section, "H", where)
        R = _matrix(section, "R", where)
        m0 = _matrix(section, "m0", where)
        P0 = _matrix(section, "P0", where)
        prior = require(section, "prior", where)
        check_keys(prior, {"kind", "low", "high"}, f"{where}.prior")
        if require(prior, "kind", f"{where}.prior") != "uniform":
            raise ConfigError(f"field {where}.prior.kind must be 'uniform'")
        low = _number(require(prior, "low", f"{where}.prior"), f"{where}.prior.low")
        high = _number(require(prior, "high", f"{where}.prior"), f"{where}.prior.high")
        if high <= low:
            raise ConfigError(f"field {where}.prior: high must exceed low")

        def builder(theta):
            return LinearGaussianSSM(
                F=np.atleast_2d(theta[0]), V=V, H=H, R=R, m0=m0, P0=P0
            )

        def prior_logpdf(theta):
            return -log(high - low) if low <= float(theta[0]) <= high else -inf

        return ParametricSSM(builder, prior_logpdf, theta_dim=1)
    raise ConfigError(f"unknown parametric model kind in {where}.kind: {kind!r}")


def _gaussian_density(sec: dict, where: str):
    check_keys(sec, {"kind", "mean", "cov"}, where)
    mean = _matrix(sec, "mean", where)
    cov = np.atleast_2d(_matrix(sec, "cov", where))
    chol = np.linalg.cholesky(cov)

    def logpdf(x):
        return gaussian_logpdf(np.atleast_2d(x) - mean, chol)

    def sampler(rng, n):
        return mean + rng.standard_normal((n, mean.shape[0])) @ chol.T

    return logpdf, sampler


def _mixture_density(sec: dict, where: str):
    check_keys(sec, {"kind", "weights", "means", "covs", "log_scale"}, where)
    weights = _matrix(sec, "weights", where)
    means = np.atleast_2d(_matrix(sec, "means", where))
    covs = _matrix(sec, "covs", where)
    log_scale = _number(sec.get("log_scale", 0.0), f"{where}.log_scale")
    if abs(weights.sum() - 1.0) > 1e-12:
        raise ConfigError(f"field {where}.weights must sum to 1")
    chols = [np.linalg.cholesky(np.atleast_2d(c)) for c in covs]

    def logpdf(x):
        x = np.atleast_2d(x)
        comps = [
            np.log(w) + gaussian_logpdf(x - m, c)
            for w, m, c in zip(weights, means, chols)
        ]
        stacked = np.stack(comps, axis=0)
        m = stacked.max(axis=0)
        return log_scale + m + np.log(np.exp(stacked - m).sum(axis=0))

    return logpdf


def build_target_sequence(section: dict, where: str = "smc"):
    """Tempered bridge between registry densities for the CLI."""
    base = require(section, "base", where)
    target = require(section, "target", where)
    steps = _int(require(section, "steps", where), f"{where}.steps", minimum=1)
    if require(base, "kind", f"{where}.base") != "gaussian":
        raise ConfigError(f"field {where}.base.kind must be 'gaussian'")
    base_logpdf, base_sampler = _gaussian_density(base, f"{where}.base")
    target_kind = require(target, "kind", f"{where}.target")
    if target_kind == "gaussian":
        target_logpdf, _ = _gaussian_density(target, f"{where}.target")
    elif target_kind == "gaussian_mixture":
        target_logpdf = _mixture_density(target, f"{where}.target")
    else:
        raise ConfigError(f"unknown target kind in {where}.target.kind: {target_kind!r}")
    schedule = np.linspace(0.0, 1.0, steps + 1)
    return TemperedSequence(base_sampler, base_logpdf, target_logpdf, schedule)


def build_level_process(section: dict, where: str = "rare_event") -> LevelProcess:
    chain = require(section, "chain", where)
    kind = require(chain, "kind", f"{where}.chain")
    if kind != "random_walk":
        raise ConfigError(f"unknown chain kind in {where}.chain.kind: {kind!r}")
    check_keys(chain, {"kind", "start", "up_prob", "step_size"}, f"{where}.chain")
    levels = require(section, "levels", where)
    if not isinstance(levels, list) or not levels:
        raise ConfigError(f"field {where}.levels must be a non-empty array")
    try:
        return random_walk_process(
            start=_number(require(chain, "start", f"{where}.chain"), f"{where}.chain.start"),
            up_prob=_number(require(chain, "up_prob", f"{where}.chain"), f"{where}.chain.up_prob"),
            levels=[_number(v, f"{where}.levels") for v in levels],
            kill_below=_number(require(section, "kill_below", where), f"{where}.kill_below"),
            max_steps=_int(section.get("max_steps", 100_000), f"{where}.max_steps", minimum=1),
            step_size=_number(chain.get("step_size", 1.0), f"{where}.chain.step_size"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc
