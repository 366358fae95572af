"""SMC samplers for moving targets: tempering and data annealing.

A sampler walks an ensemble through a sequence of distributions pi_0 ... pi_T,
alternating importance reweighting, ESS-gated resampling and MCMC moves that
leave the current intermediate target invariant.  The running product of mean
incremental weights estimates the ratio of normalizing constants Z_T / Z_0,
the same byproduct mechanism that gives particle filters their likelihood
estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateWeightsError
from .filtering import ParticleEnsemble
from .resampling import (
    ResamplingConfig,
    WeightVector,
    counts_to_indices,
    multinomial_resample,
    systematic_resample,
)
from .util import ess_from_log, log_sum_exp

__all__ = [
    "TemperedSequence",
    "AnnealedSequence",
    "RandomWalkMetropolis",
    "SmcSamplerConfig",
    "SmcResult",
    "temper_reweight",
    "move",
    "run_smc_sampler",
]


@dataclass(frozen=True)
class TemperedSequence:
    """Geometric bridge pi_n ~ (pi_T / pi_0)^{phi_n} pi_0 along an exponent schedule.

    Both end densities may be unnormalized; the sampler's constant estimate
    then targets the ratio of their normalizers.  The schedule must increase
    strictly from exactly 0 to exactly 1.
    """

    base_sampler: Callable[[np.random.Generator, int], np.ndarray]
    base_logpdf: Callable[[np.ndarray], np.ndarray]
    target_logpdf: Callable[[np.ndarray], np.ndarray]
    schedule: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.schedule, dtype=float)
        if phi.ndim != 1 or phi.shape[0] < 2:
            raise ValueError("schedule needs at least the two endpoints")
        if phi[0] != 0.0 or phi[-1] != 1.0:
            raise ValueError("schedule must start at exactly 0 and end at exactly 1")
        if (np.diff(phi) <= 0).any():
            raise ValueError("schedule must be strictly increasing")
        object.__setattr__(self, "schedule", phi)

    @property
    def n_steps(self) -> int:
        return self.schedule.shape[0] - 1

    def sample_base(self, rng, n):
        return self.base_sampler(rng, n)

    def logpdf(self, n: int, states) -> np.ndarray:
        base = np.asarray(self.base_logpdf(states), dtype=float)
        phi = self.schedule[n]
        if phi == 0.0:
            return base
        return base + phi * (np.asarray(self.target_logpdf(states), dtype=float) - base)

    def log_increment(self, n: int, states) -> np.ndarray:
        dphi = self.schedule[n] - self.schedule[n - 1]
        diff = np.asarray(self.target_logpdf(states), dtype=float) - np.asarray(
            self.base_logpdf(states), dtype=float
        )
        return dphi * diff


@dataclass(frozen=True)
class AnnealedSequence:
    """Arbitrary density sequence; log_densities[n] is log pi_n (unnormalized).

    Covers data annealing (pi_n = posterior after n observations) and any
    other user-supplied bridge.
    """

    base_sampler: Callable[[np.random.Generator, int], np.ndarray]
    log_densities: Sequence[Callable[[np.ndarray], np.ndarray]]

    def __post_init__(self):
        if len(self.log_densities) < 2:
            raise ValueError("need at least two densities in the sequence")

    @property
    def n_steps(self) -> int:
        return len(self.log_densities) - 1

    def sample_base(self, rng, n):
        return self.base_sampler(rng, n)

    def logpdf(self, n: int, states) -> np.ndarray:
        return np.asarray(self.log_densities[n](states), dtype=float)

    def log_increment(self, n: int, states) -> np.ndarray:
        return self.logpdf(n, states) - self.logpdf(n - 1, states)


@dataclass
class RandomWalkMetropolis:
    """Gaussian random-walk Metropolis kernel invariant for ``logpdf``."""

    logpdf: Callable[[np.ndarray], np.ndarray]
    chol_cov: np.ndarray

    def apply(self, rng: np.random.Generator, states: np.ndarray,
              n_steps: int = 1) -> tuple[np.ndarray, float]:
        """Apply n_steps kernel sweeps; returns (states, mean acceptance rate)."""
        states = np.array(states, dtype=float)
        lp = np.asarray(self.logpdf(states), dtype=float)
        accepted = 0
        for _ in range(n_steps):
            prop = states + rng.standard_normal(states.shape) @ self.chol_cov.T
            lp_prop = np.asarray(self.logpdf(prop), dtype=float)
            u = rng.random(states.shape[0])
            with np.errstate(invalid="ignore", divide="ignore"):
                take = np.log(u) < lp_prop - lp
            states[take] = prop[take]
            lp[take] = lp_prop[take]
            accepted += int(take.sum())
        return states, accepted / (n_steps * states.shape[0])

    @classmethod
    def adapted(cls, logpdf, states: np.ndarray, weights: np.ndarray,
                scale: float = 2.38) -> "RandomWalkMetropolis":
        """Proposal covariance set from the weighted ensemble covariance."""
        d = states.shape[1]
        cov = np.cov(states, rowvar=False, aweights=weights, ddof=0).reshape(d, d)
        cov = 0.5 * (cov + cov.T) * (scale**2 / d)
        jitter = 1e-12 * max(1.0, float(np.trace(cov)) / d)
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            chol = np.sqrt(jitter) * np.eye(d)
        return cls(logpdf, chol)


def temper_reweight(ens: ParticleEnsemble, seq, n: int) -> tuple[ParticleEnsemble, float]:
    """Reweight an ensemble targeting pi_{n-1} so it targets pi_n.

    Returns the updated ensemble and the log of the weighted mean incremental
    weight, the step-n factor of the normalizing-constant estimate.
    """
    logw = ens.weights.log_weights
    incr = seq.log_increment(n, ens.states)
    unnorm = logw + incr
    norm = log_sum_exp(unnorm)
    if not np.isfinite(norm):
        raise DegenerateWeightsError(
            f"every particle has zero weight under target {n} of the sequence"
        )
    new = ParticleEnsemble(ens.states, WeightVector(unnorm - norm, normalized=True), n)
    return new, float(norm - log_sum_exp(logw))


def move(ens: ParticleEnsemble, kernel, rng: np.random.Generator,
         n_steps: int = 1) -> ParticleEnsemble:
    """Apply an invariant MCMC kernel to every particle; weights are untouched."""
    states, _ = kernel.apply(rng, ens.states, n_steps)
    return ParticleEnsemble(states, ens.weights, ens.step_index)


@dataclass(frozen=True)
class SmcSamplerConfig:
    n_particles: int
    n_moves: int = 2
    resampling: ResamplingConfig = field(default_factory=ResamplingConfig)
    rwm_scale: float = 2.38

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_moves < 0:
            raise ValueError("n_moves must be >= 0")


@dataclass
class SmcResult:
    """Final ensemble, log normalizing-constant estimate and per-step diagnostics."""

    ensemble: ParticleEnsemble
    log_z: float
    ess: np.ndarray
    acceptance: np.ndarray


def run_smc_sampler(seq, config: SmcSamplerConfig, rng: np.random.Generator) -> SmcResult:
    """Walk the ensemble from pi_0 to pi_T; per step: reweight, resample, move."""
    n = config.n_particles
    states = seq.sample_base(rng, n)
    if states.ndim == 1:
        states = states[:, None]
    ens = ParticleEnsemble(states, WeightVector.uniform(n), 0)
    log_z = 0.0
    ess_trace = np.empty(seq.n_steps)
    acc_trace = np.full(seq.n_steps, np.nan)

    for step in range(1, seq.n_steps + 1):
        ens, inc = temper_reweight(ens, seq, step)
        log_z += inc
        ess_trace[step - 1] = ess_from_log(ens.weights.log_weights)

        scheme = config.resampling
        logw = ens.weights.log_weights
        if scheme.always or ess_trace[step - 1] < scheme.ess_fraction * n:
            w = WeightVector(logw - log_sum_exp(logw), normalized=True)
            if scheme.scheme == "systematic":
                counts = systematic_resample(w, n, rng.random())
            else:
                counts = multinomial_resample(w, n, rng)
            idx = counts_to_indices(counts)
            ens = ParticleEnsemble(ens.states[idx], WeightVector.uniform(n), step)

        if config.n_moves > 0:
            target = lambda x, _n=step: seq.logpdf(_n, x)
            kernel = RandomWalkMetropolis.adapted(
                target, ens.states, ens.weights.linear(), config.rwm_scale
            )
            moved, rate = kernel.apply(rng, ens.states, config.n_moves)
            ens = ParticleEnsemble(moved, ens.weights, step)
            acc_trace[step - 1] = rate

    return SmcResult(ens, float(log_z), ess_trace, acc_trace)
