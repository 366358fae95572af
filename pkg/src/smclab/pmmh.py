"""Particle marginal Metropolis-Hastings for joint parameter/state inference.

The acceptance ratio uses the particle filter's unbiased likelihood
estimates in place of the intractable likelihoods; the resulting chain
leaves the exact posterior invariant for any ensemble size.  The estimate
stored with the current state is never recomputed -- refreshing it would
break that exactness.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from math import exp, inf

import numpy as np

from .errors import DegenerateWeightsError
from .filtering import FilterConfig, run_filter, sample_path
from .models import ParametricSSM
from .resampling import ResamplingConfig
from .util import gaussian_logpdf, log_sum_exp

__all__ = ["ProposalKernel", "PmmhState", "PmmhConfig", "PmmhChain", "pmmh_step", "run_pmmh"]

logger = logging.getLogger(__name__)

# Unbiasedness of the likelihood estimate is what makes the chain exact, and
# it is established for independent (multinomial) resampling, so the inner
# filter always resamples multinomially.
_INNER_RESAMPLING = ResamplingConfig(scheme="multinomial", ess_fraction=1.0, always=True)


@dataclass(frozen=True)
class ProposalKernel:
    """Parameter proposal: a sampler and its transition log-density."""

    sampler: "callable"
    logdensity: "callable"

    @classmethod
    def gaussian_random_walk(cls, scale) -> "ProposalKernel":
        scale = np.atleast_1d(np.asarray(scale, dtype=float))
        if (scale <= 0).any():
            raise ValueError("proposal scale must be positive")
        chol = np.diag(scale)

        def sampler(rng, theta):
            return theta + scale * rng.standard_normal(theta.shape)

        def logdensity(theta, theta_new):
            return float(gaussian_logpdf(np.atleast_1d(theta_new - theta), chol))

        return cls(sampler, logdensity)


@dataclass(frozen=True)
class PmmhState:
    """Current parameter with the likelihood estimate produced when it was proposed."""

    theta: np.ndarray
    log_lik: float
    log_prior: float
    path: np.ndarray | None = None
    iteration: int = 0


@dataclass(frozen=True)
class PmmhConfig:
    """Inner-filter settings; resampling is fixed to always-multinomial."""

    n_particles: int
    store_paths: bool = False

    def filter_config(self) -> FilterConfig:
        return FilterConfig(
            n_particles=self.n_particles,
            resampling=_INNER_RESAMPLING,
            store_ensembles=self.store_paths,
            store_ancestry=self.store_paths,
        )


def _pf_loglik(built_model, ys, n: int, rng) -> float:
    """Bootstrap-filter log-likelihood with multinomial always-resampling.

    Streamlined inner loop for the chain: it reproduces ``run_filter`` with
    :data:`_INNER_RESAMPLING` operation for operation (same draws, same
    arithmetic), which the test suite pins down bit-for-bit.
    """
    states = built_model.sample_initial(rng, n)
    log_w = np.full(n, -np.log(n))
    log_n = np.log(n)
    incs = np.empty(len(ys))
    for t, y in enumerate(ys):
        shifted = log_w - log_sum_exp(log_w)
        p = np.exp(shifted)
        counts = rng.multinomial(n, p / p.sum())
        states = np.repeat(states, counts, axis=0)
        states = built_model.sample_transition(rng, states)
        log_g = built_model.obs_logpdf(states, y)
        norm = log_sum_exp(log_g)
        if not np.isfinite(norm):
            raise DegenerateWeightsError(f"all particle weights zero at step {t + 1}")
        incs[t] = norm - log_n
        log_w = log_g - norm
    return float(np.sum(incs))


def _estimate(model: ParametricSSM, theta, ys, cfg: PmmhConfig, rng):
    """Particle estimate of the log-likelihood at theta, plus a sampled path."""
    built = model.build(theta)
    if not cfg.store_paths:
        return _pf_loglik(built, ys, cfg.n_particles, rng), None
    trace = run_filter(built, ys, cfg.filter_config(), rng)
    path = sample_path(trace, rng)
    return trace.total_loglik, path


def pmmh_step(cur: PmmhState, model: ParametricSSM, ys, proposal: ProposalKernel,
              pf_config: PmmhConfig, rng: np.random.Generator) -> PmmhState:
    """One accept/reject move of the pseudo-marginal chain.

    A zero-prior proposal is rejected outright; a filter run whose weights
    degenerate counts as likelihood estimate -inf (rejection with a warning).
    """
    theta_new = np.atleast_1d(proposal.sampler(rng, cur.theta))
    it = cur.iteration + 1
    log_prior_new = float(model.prior_logpdf(theta_new))
    if log_prior_new == -inf:
        return replace(cur, iteration=it)
    try:
        log_lik_new, path_new = _estimate(model, theta_new, ys, pf_config, rng)
    except DegenerateWeightsError as exc:
        warnings.warn(
            f"particle filter degenerated at proposed theta={theta_new!r}: {exc}; "
            "proposal rejected",
            RuntimeWarning,
            stacklevel=2,
        )
        return replace(cur, iteration=it)
    log_ratio = (
        log_lik_new + log_prior_new + proposal.logdensity(theta_new, cur.theta)
        - cur.log_lik - cur.log_prior - proposal.logdensity(cur.theta, theta_new)
    )
    if rng.random() < exp(min(0.0, log_ratio)):
        return PmmhState(theta_new, log_lik_new, log_prior_new, path_new, it)
    return replace(cur, iteration=it)


@dataclass
class PmmhChain:
    """Post burn-in parameter trace with diagnostics."""

    thetas: np.ndarray
    log_liks: np.ndarray
    accepted: np.ndarray
    acceptance_rate: float
    paths: list | None = None


def run_pmmh(model: ParametricSSM, ys, proposal: ProposalKernel, n_iters: int,
             burn_in: int, pf_config: PmmhConfig, rng: np.random.Generator,
             init_theta) -> PmmhChain:
    """Run the chain for n_iters steps and drop the first burn_in of them."""
    if n_iters < 0 or burn_in < 0 or burn_in > n_iters:
        raise ValueError("need 0 <= burn_in <= n_iters")
    theta0 = np.atleast_1d(np.asarray(init_theta, dtype=float))
    lp0 = float(model.prior_logpdf(theta0))
    if lp0 == -inf:
        raise ValueError("init_theta has zero prior probability")
    ll0, path0 = _estimate(model, theta0, ys, pf_config, rng)
    state = PmmhState(theta0, ll0, lp0, path0, 0)

    kept = n_iters - burn_in
    thetas = np.empty((kept, theta0.shape[0]))
    log_liks = np.empty(kept)
    accepted = np.zeros(kept, dtype=bool)
    paths = [] if pf_config.store_paths else None
    n_accept = 0

    for i in range(n_iters):
        prev_theta = state.theta
        state = pmmh_step(state, model, ys, proposal, pf_config, rng)
        moved = state.theta is not prev_theta
        n_accept += moved
        j = i - burn_in
        if j >= 0:
            thetas[j] = state.theta
            log_liks[j] = state.log_lik
            accepted[j] = moved
            if paths is not None:
                paths.append(state.path)

    rate = n_accept / n_iters if n_iters else 0.0
    return PmmhChain(thetas, log_liks, accepted, rate, paths)
