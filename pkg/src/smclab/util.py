"""Low-level numeric and RNG helpers shared across the package."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from math import log, pi
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateWeightsError

_LOG_2PI = log(2.0 * pi)

T = TypeVar("T")
R = TypeVar("R")


def log_sum_exp(a: np.ndarray, axis: int | None = None):
    """log(sum(exp(a))) with max shift; tolerates -inf entries."""
    a = np.asarray(a, dtype=float)
    if axis is None:
        m = float(np.max(a))
        if not np.isfinite(m):
            return m
        return m + float(np.log(np.sum(np.exp(a - m))))
    m = np.max(a, axis=axis)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - np.expand_dims(safe, axis)), axis=axis))
    return np.where(np.isfinite(m), out + safe, m)


def normalize_log_weights(log_weights: np.ndarray) -> tuple[np.ndarray, float]:
    """Shift log-weights so they sum to one; returns (normalized, log-normalizer)."""
    z = log_sum_exp(log_weights)
    if not np.isfinite(z):
        raise DegenerateWeightsError("all weights are zero (every log-weight is -inf)")
    return log_weights - z, z


def ess_from_log(log_weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(W_i^2) of (internally re-normalized) log-weights."""
    lw = log_weights - log_sum_exp(log_weights)
    return float(1.0 / np.sum(np.exp(2.0 * lw)))


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted average along axis 0, always returned as a 1-d array."""
    return np.atleast_1d(np.average(values, weights=weights, axis=0))


def weighted_quantile(values: np.ndarray, weights: np.ndarray, qs) -> np.ndarray:
    """Weighted quantiles of a 1-d sample (midpoint cumulative-weight rule)."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = np.asarray(weights, dtype=float)[order]
    cw = np.cumsum(w)
    grid = (cw - 0.5 * w) / cw[-1]
    return np.interp(np.asarray(qs, dtype=float), grid, v)


def gaussian_logpdf(resid: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Log-density of N(0, L L') at residuals laid out along the last axis."""
    resid = np.asarray(resid, dtype=float)
    d = chol.shape[0]
    if d == 1:
        var = float(chol[0, 0]) ** 2
        r = resid[..., 0]
        out = r * r
        out *= -0.5 / var
        out -= 0.5 * (_LOG_2PI + log(var))
        return out
    flat = resid.reshape(-1, d)
    z = solve_triangular(chol, flat.T, lower=True).T
    quad = np.einsum("ij,ij->i", z, z).reshape(resid.shape[:-1])
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (quad + d * _LOG_2PI + logdet)


def validate_symmetric(mat: np.ndarray, name: str, tol: float = 1e-10) -> None:
    scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0)
    if float(np.max(np.abs(mat - mat.T))) > tol * scale:
        raise ValueError(f"{name} must be symmetric")


def psd_sqrt(mat: np.ndarray, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    """Factor A with A A' = mat for a symmetric PSD matrix (eigenvalue clipping)."""
    validate_symmetric(mat, name, tol)
    vals, vecs = np.linalg.eigh(mat)
    scale = max(1.0, float(vals[-1]))
    if vals[0] < -tol * scale:
        raise ValueError(f"{name} must be positive semi-definite (min eigenvalue {vals[0]:.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Named deterministic RNG sub-stream.

    The labels are hashed with SHA-256 and mixed with the master seed through
    a ``SeedSequence``, so adding or re-ordering *other* streams never
    perturbs this one.  Used by the CLI so that ``--threads`` cannot change
    results.
    """
    h = hashlib.sha256()
    for lab in labels:
        h.update(str(lab).encode("utf-8"))
        h.update(b"\x1f")
    digest = h.digest()
    words = [int.from_bytes(digest[i : i + 8], "little") for i in (0, 8, 16, 24)]
    seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence([seed, *words]))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Map preserving input order; thread count never affects the results."""
    items = list(items)
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
