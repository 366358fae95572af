"""State-space model abstraction and the concrete reference models.

A model bundles the initial law, the Markov transition and the observation
density g(y|x).  Everything random takes an explicit ``numpy.random.Generator``
so the caller owns determinism; model objects are immutable after
construction and safe to share across threads.

States are stored row-wise: continuous models use float arrays of shape
``(n, state_dim)``, the finite-state model uses integer arrays of shape
``(n,)``.  Observations are float rows of shape ``(n, obs_dim)``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import cholesky

from .errors import CapabilityError
from .util import gaussian_logpdf, log_sum_exp, psd_sqrt, validate_symmetric


class StateSpaceModel(abc.ABC):
    """Hidden Markov state process observed through a conditional density."""

    state_dim: int
    obs_dim: int

    @abc.abstractmethod
    def sample_initial(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n independent states from the initial distribution."""

    @abc.abstractmethod
    def sample_transition(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        """Draw one transition for every row of ``states``."""

    @abc.abstractmethod
    def obs_logpdf(self, states: np.ndarray, y: np.ndarray) -> np.ndarray:
        """log g(y|x) for every row of ``states``; finite or -inf, never NaN."""

    def sample_observation(self, rng: np.random.Generator, states: np.ndarray) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} cannot sample observations")

    @property
    def has_transition_density(self) -> bool:
        """Whether log p(x'|x) is available (deterministic transitions lack it)."""
        return False

    def transition_logpdf(self, prev: np.ndarray, new: np.ndarray) -> np.ndarray:
        """log p(new|prev) w.r.t. the reference measure; broadcasts over batch axes."""
        raise CapabilityError(f"{type(self).__name__} has no transition density")


@dataclass(frozen=True)
class LinearGaussianSSM(StateSpaceModel):
    """X_n = F X_{n-1} + N(0, V),  Y_n = H X_n + N(0, R),  X_0 ~ N(m0, P0).

    V and P0 may be singular (even zero) for degenerate dynamics; in that
    case the transition density is unavailable.  R must be positive definite.
    """

    F: np.ndarray
    V: np.ndarray
    H: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        d, dy = F.shape[0], H.shape[0]
        if F.shape != (d, d) or V.shape != (d, d) or P0.shape != (d, d):
            raise ValueError("F, V, P0 must be square with matching state dimension")
        if H.shape != (dy, d) or R.shape != (dy, dy) or m0.shape != (d,):
            raise ValueError("H, R, m0 dimensions are not conformable")
        for name, val in (("F", F), ("V", V), ("H", H), ("R", R), ("m0", m0), ("P0", P0)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "state_dim", d)
        object.__setattr__(self, "obs_dim", dy)
        object.__setattr__(self, "_sqrt_V", psd_sqrt(V, "V"))
        object.__setattr__(self, "_sqrt_P0", psd_sqrt(P0, "P0"))
        validate_symmetric(R, "R")
        try:
            chol_R = cholesky(R, lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own
            raise ValueError("R must be positive definite") from exc
        object.__setattr__(self, "_chol_R", chol_R)
        try:
            object.__setattr__(self, "_chol_V", cholesky(V, lower=True))
        except Exception:
            object.__setattr__(self, "_chol_V", None)

    def sample_initial(self, rng, n):
        z = rng.standard_normal((n, self.state_dim))
        return self.m0 + z @ self._sqrt_P0.T

    def sample_transition(self, rng, states):
        z = rng.standard_normal(states.shape)
        return states @ self.F.T + z @ self._sqrt_V.T

    def sample_observation(self, rng, states):
        z = rng.standard_normal((states.shape[0], self.obs_dim))
        return states @ self.H.T + z @ self._chol_R.T

    @property
    def has_transition_density(self) -> bool:
        return self._chol_V is not None

    def transition_logpdf(self, prev, new):
        if self._chol_V is None:
            raise CapabilityError("transition density unavailable: V is singular")
        return gaussian_logpdf(new - prev @ self.F.T, self._chol_V)

    def obs_logpdf(self, states, y):
        return gaussian_logpdf(y - states @ self.H.T, self._chol_R)


@dataclass(frozen=True)
class FiniteHMM(StateSpaceModel):
    """Finite-state hidden Markov model; states are integer labels 0..K-1.

    ``emit_logpdf(states, y)`` must accept an integer array of state labels
    and return the emission log-densities, so exact inference can sweep all
    K labels at once.  ``emit_sampler`` is optional and only needed to
    simulate observations.
    """

    init_probs: np.ndarray
    trans_matrix: np.ndarray
    emit_logpdf: Callable[[np.ndarray, np.ndarray], np.ndarray]
    emit_sampler: Callable[[np.random.Generator, np.ndarray], np.ndarray] | None = None
    obs_dim: int = 1

    def __post_init__(self):
        p0 = np.asarray(self.init_probs, dtype=float)
        P = np.asarray(self.trans_matrix, dtype=float)
        k = p0.shape[0]
        if P.shape != (k, k):
            raise ValueError("trans_matrix must be K x K")
        if (p0 < 0).any() or (P < 0).any():
            raise ValueError("probabilities must be non-negative")
        if abs(p0.sum() - 1.0) > 1e-12:
            raise ValueError("init_probs must sum to 1 (within 1e-12)")
        rowsum = P.sum(axis=1)
        if np.max(np.abs(rowsum - 1.0)) > 1e-12:
            raise ValueError("trans_matrix rows must sum to 1 (within 1e-12)")
        object.__setattr__(self, "init_probs", p0)
        object.__setattr__(self, "trans_matrix", P)
        object.__setattr__(self, "state_dim", k)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_init", np.log(p0))
            object.__setattr__(self, "_log_trans", np.log(P))
        object.__setattr__(self, "_cum_init", np.cumsum(p0))
        object.__setattr__(self, "_cum_rows", np.cumsum(P, axis=1))

    @property
    def n_states(self) -> int:
        return self.state_dim

    def sample_initial(self, rng, n):
        u = rng.random(n)
        idx = np.searchsorted(self._cum_init, u, side="right")
        return np.minimum(idx, self.n_states - 1).astype(np.int64)

    def sample_transition(self, rng, states):
        u = rng.random(states.shape[0])
        rows = self._cum_rows[states]
        idx = (u[:, None] > rows).sum(axis=1)
        return np.minimum(idx, self.n_states - 1).astype(np.int64)

    def sample_observation(self, rng, states):
        if self.emit_sampler is None:
            raise CapabilityError("FiniteHMM built without an emission sampler")
        return self.emit_sampler(rng, states)

    @property
    def has_transition_density(self) -> bool:
        return True

    def transition_logpdf(self, prev, new):
        return self._log_trans[prev, new]

    def emission_logpdf_all(self, y) -> np.ndarray:
        """Emission log-densities of y under every state label."""
        return np.asarray(self.emit_logpdf(np.arange(self.n_states), y), dtype=float)

    def obs_logpdf(self, states, y):
        return self.emission_logpdf_all(y)[states]

    def empirical_marginals(self, states, weights) -> np.ndarray:
        """Weighted state-occupancy histogram of a particle ensemble."""
        return np.bincount(states, weights=weights, minlength=self.n_states)

    @classmethod
    def with_gaussian_emissions(cls, init_probs, trans_matrix, means, sds) -> "FiniteHMM":
        means = np.asarray(means, dtype=float)
        sds = np.asarray(sds, dtype=float)
        if (sds <= 0).any():
            raise ValueError("emission sds must be positive")

        def logpdf(states, y):
            r = (float(np.asarray(y).reshape(-1)[0]) - means[states]) / sds[states]
            return -0.5 * r * r - np.log(sds[states]) - 0.5 * np.log(2.0 * np.pi)

        def sampler(rng, states):
            draw = means[states] + sds[states] * rng.standard_normal(states.shape[0])
            return draw[:, None]

        return cls(init_probs, trans_matrix, logpdf, sampler)

    @classmethod
    def with_categorical_emissions(cls, init_probs, trans_matrix, emit_matrix) -> "FiniteHMM":
        E = np.asarray(emit_matrix, dtype=float)
        if np.max(np.abs(E.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("emit_matrix rows must sum to 1")
        with np.errstate(divide="ignore"):
            log_E = np.log(E)
        cum_E = np.cumsum(E, axis=1)

        def logpdf(states, y):
            sym = int(np.asarray(y).reshape(-1)[0])
            return log_E[states, sym]

        def sampler(rng, states):
            u = rng.random(states.shape[0])
            sym = (u[:, None] > cum_E[states]).sum(axis=1)
            return np.minimum(sym, E.shape[1] - 1).astype(float)[:, None]

        return cls(init_probs, trans_matrix, logpdf, sampler)


@dataclass(frozen=True)
class StochasticGrowthSSM(StateSpaceModel):
    """Scalar nonlinear benchmark: x' = a x + b x / (1 + x^2) + noise, y = x^2 / c + noise.

    Demo plumbing only; it has no closed-form reference solution.
    """

    a: float = 0.5
    b: float = 25.0
    c: float = 20.0
    trans_sd: float = np.sqrt(10.0)
    obs_sd: float = 1.0
    init_sd: float = 2.0

    def __post_init__(self):
        if self.trans_sd <= 0 or self.obs_sd <= 0 or self.init_sd <= 0:
            raise ValueError("noise scales must be positive")
        object.__setattr__(self, "state_dim", 1)
        object.__setattr__(self, "obs_dim", 1)

    def _drift(self, x):
        return self.a * x + self.b * x / (1.0 + x * x)

    def sample_initial(self, rng, n):
        return self.init_sd * rng.standard_normal((n, 1))

    def sample_transition(self, rng, states):
        return self._drift(states) + self.trans_sd * rng.standard_normal(states.shape)

    def sample_observation(self, rng, states):
        return states**2 / self.c + self.obs_sd * rng.standard_normal(states.shape)

    @property
    def has_transition_density(self) -> bool:
        return True

    def transition_logpdf(self, prev, new):
        r = (new[..., 0] - self._drift(prev[..., 0])) / self.trans_sd
        return -0.5 * r * r - np.log(self.trans_sd) - 0.5 * np.log(2.0 * np.pi)

    def obs_logpdf(self, states, y):
        r = (float(np.asarray(y).reshape(-1)[0]) - states[:, 0] ** 2 / self.c) / self.obs_sd
        return -0.5 * r * r - np.log(self.obs_sd) - 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ParametricSSM:
    """A model family indexed by a parameter vector, with a prior on it."""

    builder: Callable[[np.ndarray], StateSpaceModel]
    prior_logpdf: Callable[[np.ndarray], float]
    theta_dim: int

    def build(self, theta: np.ndarray) -> StateSpaceModel:
        return self.builder(np.asarray(theta, dtype=float))


def simulate(model: StateSpaceModel, T: int, rng: np.random.Generator):
    """Draw a state path of length T+1 and the T observations along it."""
    if T < 0:
        raise ValueError("T must be >= 0")
    cur = model.sample_initial(rng, 1)
    states = [cur[0]]
    obs = []
    for _ in range(T):
        cur = model.sample_transition(rng, cur)
        states.append(cur[0])
        obs.append(model.sample_observation(rng, cur)[0])
    obs_arr = np.asarray(obs, dtype=float) if obs else np.empty((0, model.obs_dim))
    return np.asarray(states), obs_arr
