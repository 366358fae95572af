"""Weight bookkeeping and resampling schemes shared by all the SMC algorithms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError
from .util import ess_from_log, log_sum_exp

__all__ = [
    "WeightVector",
    "ResampleCounts",
    "ResamplingConfig",
    "ess",
    "should_resample",
    "systematic_resample",
    "multinomial_resample",
    "counts_to_indices",
]


@dataclass(frozen=True)
class WeightVector:
    """Particle weights kept in log space.

    ``normalized`` means exp(log_weights) sums to one (checked to 1e-10).
    NaN entries are rejected outright; -inf (zero weight) is legal.
    """

    log_weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        object.__setattr__(self, "log_weights", lw)
        if lw.ndim != 1 or lw.shape[0] < 1:
            raise ValueError("log_weights must be a non-empty 1-d array")
        if np.isnan(lw).any():
            raise ValueError("log_weights contain NaN")
        if self.normalized:
            total = float(np.sum(np.exp(lw)))
            if abs(total - 1.0) > 1e-10:
                raise ValueError(f"weights declared normalized but sum to {total!r}")

    @property
    def n(self) -> int:
        return self.log_weights.shape[0]

    def linear(self) -> np.ndarray:
        """Weights on the linear scale."""
        return np.exp(self.log_weights)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, -np.log(n)), normalized=True)

    @classmethod
    def from_unnormalized(cls, log_weights: np.ndarray) -> tuple["WeightVector", float]:
        """Normalize raw log-weights; returns the vector and the log-normalizer."""
        lw = np.asarray(log_weights, dtype=float)
        z = log_sum_exp(lw)
        if not np.isfinite(z):
            raise DegenerateWeightsError("all weights are zero (every log-weight is -inf)")
        return cls(lw - z, normalized=True), float(z)


@dataclass(frozen=True)
class ResampleCounts:
    """Offspring counts per particle; they sum to the requested output size."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", c)
        if (c < 0).any():
            raise ValueError("offspring counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ResamplingConfig:
    """When and how to resample inside a filter step.

    ``ess_fraction`` triggers resampling when ESS < ess_fraction * N;
    ``always`` forces resampling at every step (used e.g. inside PMMH).
    """

    scheme: str = "systematic"
    ess_fraction: float = 0.5
    always: bool = False

    def __post_init__(self):
        if self.scheme not in ("systematic", "multinomial"):
            raise ValueError(f"unknown resampling scheme {self.scheme!r}")
        if not 0.0 < self.ess_fraction <= 1.0:
            raise ValueError("ess_fraction must lie in (0, 1]")


def ess(w: WeightVector) -> float:
    """Effective sample size 1 / sum(W_i^2); lies in [1, N]."""
    if not w.normalized:
        raise ValueError("ess requires normalized weights")
    return ess_from_log(w.log_weights)


def should_resample(w: WeightVector, threshold_fraction: float) -> bool:
    """True when the ESS has dropped below threshold_fraction * N."""
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must lie in (0, 1]")
    return ess(w) < threshold_fraction * w.n


def systematic_resample(w: WeightVector, m: int, u: float) -> ResampleCounts:
    """Balanced (systematic) resampling on the grid (u + k) / m.

    Particle i receives the number of grid points falling in the half-open
    cumulative-weight interval (c_{i-1}, c_i].  Offspring counts satisfy
    E[N_i] = m W_i and |N_i - m W_i| < 1.
    """
    if not w.normalized:
        raise ValueError("systematic_resample requires normalized weights")
    if m < 1:
        raise ValueError("output size m must be >= 1")
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie strictly inside (0, 1)")
    cum = np.cumsum(w.linear())
    cum[-1] = 1.0  # pin the endpoint against rounding drift
    grid = (u + np.arange(m)) / m
    idx = np.searchsorted(cum, grid, side="left")
    return ResampleCounts(np.bincount(idx, minlength=w.n))


def multinomial_resample(w: WeightVector, m: int, rng: np.random.Generator) -> ResampleCounts:
    """m independent categorical draws with probabilities W_i."""
    if not w.normalized:
        raise ValueError("multinomial_resample requires normalized weights")
    if m < 1:
        raise ValueError("output size m must be >= 1")
    p = w.linear()
    return ResampleCounts(rng.multinomial(m, p / p.sum()))


def counts_to_indices(counts: ResampleCounts) -> np.ndarray:
    """Expand offspring counts into ancestor indices (sorted order)."""
    return np.repeat(np.arange(counts.counts.shape[0]), counts.counts)
