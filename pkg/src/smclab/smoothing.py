"""Marginal particle smoother: filter particles reused with backward weights.

The smoother never moves particles; it reweights the stored filter ensembles
with the backward recursion

    W_{n|T}^i = sum_k W_{n+1|T}^k  W_n^i p(X_{n+1}^k | X_n^i)
                                   / sum_j W_n^j p(X_{n+1}^k | X_n^j),

run entirely in log space.  The pairwise transition densities make one step
cost O(N^2); the kernel matrix is evaluated in column chunks so memory stays
O(N * chunk).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DegenerateWeightsError
from .filtering import FilterTrace
from .models import StateSpaceModel
from .util import log_sum_exp, weighted_mean, weighted_quantile

__all__ = ["SmoothingWeights", "backward_smooth", "smoothed_means", "smoothed_quantiles"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothingWeights:
    """Normalized log-weights (T+1, N); row n reweights the step-n filter particles."""

    log_weights: np.ndarray

    def linear(self) -> np.ndarray:
        return np.exp(self.log_weights)


def _pairwise_logpdf(model, prev, new_chunk):
    """log p(new_k | prev_j) for every pair, shape (len(prev), len(chunk))."""
    if prev.ndim == 1:  # integer-labelled states
        return model.transition_logpdf(prev[:, None], new_chunk[None, :])
    return model.transition_logpdf(prev[:, None, :], new_chunk[None, :, :])


def backward_smooth(trace: FilterTrace, model: StateSpaceModel,
                    chunk_size: int = 512) -> SmoothingWeights:
    """Backward pass over a filter trace with stored ensembles.

    The step-T weights equal the filter weights; earlier steps are filled by
    the backward recursion.  Raises when the trace lacks stored ensembles,
    when the model has no transition density, or when some next-step particle
    with smoothing mass is unreachable from every current particle.
    """
    if trace.ensembles is None:
        raise ValueError("backward_smooth needs a trace built with store_ensembles=True")
    if not model.has_transition_density:
        raise CapabilityError("backward smoothing needs a transition density")

    ensembles = trace.ensembles
    T = len(ensembles) - 1
    n = ensembles[0].n
    out = np.empty((T + 1, n))
    out[T] = ensembles[T].weights.log_weights

    for step in range(T - 1, -1, -1):
        prev = ensembles[step].states
        new = ensembles[step + 1].states
        lw = ensembles[step].weights.log_weights
        lw_next = out[step + 1]

        row = np.full(n, -np.inf)
        for k0 in range(0, n, chunk_size):
            kernel = _pairwise_logpdf(model, prev, new[k0 : k0 + chunk_size])
            kernel += lw[:, None]
            # one exp of the kernel serves both reductions: column sums give
            # the denominators, a matrix-vector product gives the row update
            shift = kernel.max(axis=0)
            safe = np.where(np.isfinite(shift), shift, 0.0)
            kernel -= safe[None, :]
            np.exp(kernel, out=kernel)
            colsum = kernel.sum(axis=0)
            dead = colsum == 0.0
            if dead.any():
                blocked = dead & np.isfinite(lw_next[k0 : k0 + chunk_size])
                if blocked.any():
                    k = k0 + int(np.argmax(blocked))
                    raise DegenerateWeightsError(
                        f"particle {k} at step {step + 1} is unreachable from every "
                        f"step-{step} particle but carries smoothing mass"
                    )
            with np.errstate(divide="ignore"):
                denom = np.log(colsum) + safe
            # zero smoothing mass on unreachable particles is a removable 0/0
            gain = lw_next[k0 : k0 + chunk_size] - np.where(dead, 0.0, denom) + safe
            gain[dead] = -np.inf
            top = gain.max()
            if top == -np.inf:
                continue
            contrib = kernel @ np.exp(gain - top)
            with np.errstate(divide="ignore"):
                row = np.logaddexp(row, np.log(contrib) + top)

        drift = log_sum_exp(row)
        if abs(drift) > 1e-10:
            logger.info("smoothing weight drift %.3e at step %d", drift, step)
        out[step] = row - drift

    return SmoothingWeights(out)


def smoothed_means(trace: FilterTrace, sw: SmoothingWeights) -> np.ndarray:
    """Weighted particle means per step under the smoothing weights, shape (T+1, d)."""
    w = sw.linear()
    return np.asarray(
        [weighted_mean(ens.states, w[i]) for i, ens in enumerate(trace.ensembles)]
    )


def smoothed_quantiles(trace: FilterTrace, sw: SmoothingWeights, qs) -> np.ndarray:
    """Weighted quantiles per step for scalar states, shape (T+1, len(qs))."""
    w = sw.linear()
    rows = []
    for i, ens in enumerate(trace.ensembles):
        values = ens.states[:, 0] if ens.states.ndim > 1 else ens.states
        rows.append(weighted_quantile(values, w[i], qs))
    return np.asarray(rows)
