"""Bootstrap (SIR) and auxiliary particle filters with likelihood estimation.

Both filters resample at the *beginning* of a step (the benefit of
resampling only shows up after propagation), gate resampling on the
effective sample size, and keep every weight in log space.  The per-step
likelihood increments are arranged so that their exponentiated sum stays an
unbiased estimate of the observation likelihood whether or not resampling
was skipped at intermediate steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, cholesky, cho_factor

from .errors import CapabilityError, DegenerateWeightsError
from .models import FiniteHMM, LinearGaussianSSM, StateSpaceModel
from .resampling import (
    ResamplingConfig,
    WeightVector,
    counts_to_indices,
    multinomial_resample,
    systematic_resample,
)
from .util import ess_from_log, gaussian_logpdf, log_sum_exp, weighted_mean

__all__ = [
    "ParticleEnsemble",
    "FilterTrace",
    "FilterConfig",
    "AuxiliarySpec",
    "sir_step",
    "apf_step",
    "run_filter",
    "sample_path",
]


@dataclass(frozen=True)
class ParticleEnsemble:
    """N weighted states at one generation of a sequential sampler."""

    states: np.ndarray
    weights: WeightVector
    step_index: int = 0

    def __post_init__(self):
        if self.states.shape[0] != self.weights.n:
            raise ValueError("states and weights disagree on the particle count")

    @property
    def n(self) -> int:
        return self.weights.n

    @classmethod
    def initial(cls, model: StateSpaceModel, n: int, rng: np.random.Generator) -> "ParticleEnsemble":
        return cls(model.sample_initial(rng, n), WeightVector.uniform(n), 0)


@dataclass
class FilterTrace:
    """Per-step summaries of a filter run; arrays are indexed by step 1..T.

    When ensembles are stored, ``ensembles[n]`` holds the weighted particles
    targeting the filter distribution at step n = 0..T (the initial ensemble
    included); ``ancestors[t]`` maps the particles of step t+1 back to their
    parents at step t.
    """

    means: np.ndarray
    ess: np.ndarray
    loglik_increments: np.ndarray
    resampled: np.ndarray
    ensembles: list | None = None
    ancestors: list | None = None

    @property
    def n_steps(self) -> int:
        return self.loglik_increments.shape[0]

    @property
    def total_loglik(self) -> float:
        return float(np.sum(self.loglik_increments))


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int
    resampling: ResamplingConfig = field(default_factory=ResamplingConfig)
    store_ensembles: bool = False
    store_ancestry: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")


@dataclass(frozen=True)
class AuxiliarySpec:
    """Lookahead weight r, data-informed proposal Q, and the density ratio dP/dQ.

    ``log_dp_dq`` is the log Radon-Nikodym derivative of the transition
    kernel against the proposal; when it is None it is computed as
    ``transition_logpdf - proposal_logdensity``, so at least one of the two
    optional fields must be present.
    """

    lookahead_logweight: Callable[[np.ndarray, np.ndarray], np.ndarray]
    proposal_sampler: Callable[[np.random.Generator, np.ndarray, np.ndarray], np.ndarray]
    proposal_logdensity: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None
    log_dp_dq: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.proposal_logdensity is None and self.log_dp_dq is None:
            raise ValueError("AuxiliarySpec needs proposal_logdensity or log_dp_dq")

    @classmethod
    def bootstrap(cls, model: StateSpaceModel) -> "AuxiliarySpec":
        """Trivial choices r = 1 and Q = P; reduces the APF to the SIR filter."""

        def zeros(states, y):
            return np.zeros(states.shape[0])

        return cls(
            lookahead_logweight=zeros,
            proposal_sampler=lambda rng, states, y: model.sample_transition(rng, states),
            proposal_logdensity=lambda states, y, new: model.transition_logpdf(states, new),
            log_dp_dq=lambda states, y, new: np.zeros(states.shape[0]),
        )

    @classmethod
    def for_hmm(cls, model: FiniteHMM) -> "AuxiliarySpec":
        """Ideal lookahead r(x,y) = sum_x' p(x'|x) g(y|x') and Q proportional to g * P.

        With these choices the final-step weights are constant.
        """
        log_trans = model._log_trans

        def lookahead(states, y):
            emit = model.emission_logpdf_all(y)
            return log_sum_exp(log_trans[states] + emit[None, :], axis=1)

        def sampler(rng, states, y):
            emit = model.emission_logpdf_all(y)
            logq = log_trans[states] + emit[None, :]
            q = np.exp(logq - log_sum_exp(logq, axis=1)[:, None])
            cum = np.cumsum(q, axis=1)
            u = rng.random(states.shape[0])
            idx = (u[:, None] > cum).sum(axis=1)
            return np.minimum(idx, model.n_states - 1).astype(np.int64)

        def log_ratio(states, y, new):
            # p/q = r/g exactly for the ideal proposal
            return lookahead(states, y) - model.obs_logpdf(new, y)

        return cls(lookahead, sampler, log_dp_dq=log_ratio)

    @classmethod
    def for_linear_gaussian(cls, model: LinearGaussianSSM) -> "AuxiliarySpec":
        """Exact Gaussian lookahead and locally optimal proposal for a linear model."""
        if not model.has_transition_density:
            raise CapabilityError("the optimal proposal needs a non-singular V")
        F, V, H, R = model.F, model.V, model.H, model.R
        d = model.state_dim
        S = H @ V @ H.T + R
        chol_S = cholesky(0.5 * (S + S.T), lower=True)
        V_inv = cho_solve(cho_factor(V, lower=True), np.eye(d))
        R_inv = cho_solve(cho_factor(R, lower=True), np.eye(model.obs_dim))
        prec = V_inv + H.T @ R_inv @ H
        cov_q = np.linalg.inv(prec)
        cov_q = 0.5 * (cov_q + cov_q.T)
        chol_q = cholesky(cov_q, lower=True)
        A = cov_q @ V_inv @ F
        B = cov_q @ H.T @ R_inv
        HF = H @ F

        def lookahead(states, y):
            return gaussian_logpdf(y - states @ HF.T, chol_S)

        def proposal_mean(states, y):
            return states @ A.T + y @ B.T

        def sampler(rng, states, y):
            z = rng.standard_normal(states.shape)
            return proposal_mean(states, y) + z @ chol_q.T

        def proposal_logdensity(states, y, new):
            return gaussian_logpdf(new - proposal_mean(states, y), chol_q)

        def log_ratio(states, y, new):
            # p/q = r/g exactly for the locally optimal Gaussian proposal
            return lookahead(states, y) - model.obs_logpdf(new, y)

        return cls(lookahead, sampler, proposal_logdensity, log_ratio)


def _resample_indices(stage_logw: np.ndarray, scheme: ResamplingConfig,
                      rng: np.random.Generator) -> np.ndarray:
    w = WeightVector(stage_logw - log_sum_exp(stage_logw), normalized=True)
    n = w.n
    if scheme.scheme == "systematic":
        counts = systematic_resample(w, n, rng.random())
    else:
        counts = multinomial_resample(w, n, rng)
    return counts_to_indices(counts)


def _step(ens: ParticleEnsemble, y, model: StateSpaceModel, scheme: ResamplingConfig,
          rng: np.random.Generator, aux: AuxiliarySpec | None):
    """One resample / propagate / reweight cycle shared by SIR and APF."""
    step = ens.step_index + 1
    logw = ens.weights.log_weights
    n = ens.n

    if aux is None:
        logr = None
        stage_logw = logw
        stage1_correction = 0.0
    else:
        logr = np.asarray(aux.lookahead_logweight(ens.states, y), dtype=float)
        stage_logw = logw + logr
        norm_stage = log_sum_exp(stage_logw)
        if not np.isfinite(norm_stage):
            raise DegenerateWeightsError(f"lookahead weights all zero at step {step}")
        stage1_correction = norm_stage - log_sum_exp(logw)

    do_resample = scheme.always or ess_from_log(stage_logw) < scheme.ess_fraction * n
    if do_resample:
        idx = _resample_indices(stage_logw, scheme, rng)
        anc_states = ens.states[idx]
    else:
        idx = np.arange(n)
        anc_states = ens.states

    if aux is None:
        new_states = model.sample_transition(rng, anc_states)
        contrib = np.asarray(model.obs_logpdf(new_states, y), dtype=float)
    else:
        new_states = aux.proposal_sampler(rng, anc_states, y)
        log_g = np.asarray(model.obs_logpdf(new_states, y), dtype=float)
        if aux.log_dp_dq is not None:
            ratio = np.asarray(aux.log_dp_dq(anc_states, y, new_states), dtype=float)
        else:
            ratio = np.asarray(
                model.transition_logpdf(anc_states, new_states)
                - aux.proposal_logdensity(anc_states, y, new_states),
                dtype=float,
            )
        contrib = (log_g - logr[idx]) + ratio

    if do_resample:
        norm = log_sum_exp(contrib)
        if not np.isfinite(norm):
            raise DegenerateWeightsError(f"all particle weights zero at step {step}")
        increment = norm - np.log(n)
        new_logw = contrib - norm
    else:
        unnorm = stage_logw + contrib
        norm = log_sum_exp(unnorm)
        if not np.isfinite(norm):
            raise DegenerateWeightsError(f"all particle weights zero at step {step}")
        increment = norm - log_sum_exp(stage_logw)
        new_logw = unnorm - norm

    new_ens = ParticleEnsemble(new_states, WeightVector(new_logw, normalized=True), step)
    return new_ens, float(increment + stage1_correction), bool(do_resample), idx


def sir_step(ens: ParticleEnsemble, y, model: StateSpaceModel,
             scheme: ResamplingConfig, rng: np.random.Generator):
    """Bootstrap-filter step: resample (ESS-gated), propagate through P, reweight by g.

    Returns the new ensemble and the log-likelihood increment
    log p(y_n | y_{1:n-1}) estimated at this step.
    """
    new_ens, increment, _, _ = _step(ens, y, model, scheme, rng, None)
    return new_ens, increment


def apf_step(ens: ParticleEnsemble, y, model: StateSpaceModel, aux: AuxiliarySpec,
             rng: np.random.Generator, scheme: ResamplingConfig = ResamplingConfig()):
    """Auxiliary-filter step: lookahead reweight, resample, propagate from Q, correct.

    Needs the transition density (the correction weight involves dP/dQ), so
    models with deterministic or density-free transitions are rejected.
    """
    if not model.has_transition_density:
        raise CapabilityError(
            "the auxiliary particle filter needs a transition density; "
            f"{type(model).__name__} does not provide one"
        )
    new_ens, increment, _, _ = _step(ens, y, model, scheme, rng, aux)
    return new_ens, increment


def run_filter(model: StateSpaceModel, ys: np.ndarray, config: FilterConfig,
               rng: np.random.Generator, aux: AuxiliarySpec | None = None) -> FilterTrace:
    """Run a full filter pass over observation rows y_1..y_T.

    ``aux=None`` gives the bootstrap filter; passing an :class:`AuxiliarySpec`
    gives the auxiliary filter.  The trace records the weighted mean, ESS,
    likelihood increment and resampling flag per step, and optionally the
    weighted ensembles (needed by the backward smoother) and the ancestry
    (needed to draw joint state paths).
    """
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    T = ys.shape[0]
    if aux is not None and not model.has_transition_density:
        raise CapabilityError("the auxiliary particle filter needs a transition density")

    ens = ParticleEnsemble.initial(model, config.n_particles, rng)
    mean_cols = ens.states.shape[1] if ens.states.ndim > 1 else 1
    means = np.empty((T, mean_cols))
    ess_arr = np.empty(T)
    incs = np.empty(T)
    flags = np.zeros(T, dtype=bool)
    ensembles = [ens] if config.store_ensembles else None
    ancestors = [] if config.store_ancestry else None

    for t in range(T):
        ens, inc, resampled, idx = _step(ens, ys[t], model, config.resampling, rng, aux)
        w = ens.weights.linear()
        means[t] = weighted_mean(ens.states, w)
        ess_arr[t] = ess_from_log(ens.weights.log_weights)
        incs[t] = inc
        flags[t] = resampled
        if ensembles is not None:
            ensembles.append(ens)
        if ancestors is not None:
            ancestors.append(idx)

    return FilterTrace(means, ess_arr, incs, flags, ensembles, ancestors)


def sample_path(trace: FilterTrace, rng: np.random.Generator) -> np.ndarray:
    """Draw one state path from the particle approximation of the joint smoother.

    Picks a final particle by weight and follows its ancestry backwards;
    requires the trace to have stored ensembles and ancestry.
    """
    if trace.ensembles is None or trace.ancestors is None:
        raise ValueError("sample_path needs a trace with stored ensembles and ancestry")
    final = trace.ensembles[-1]
    cum = np.cumsum(final.weights.linear())
    cum[-1] = 1.0
    j = int(np.searchsorted(cum, rng.random(), side="left"))
    path = [final.states[j]]
    for t in range(len(trace.ancestors) - 1, -1, -1):
        j = int(trace.ancestors[t][j])
        path.append(trace.ensembles[t].states[j])
    return np.asarray(path[::-1])
