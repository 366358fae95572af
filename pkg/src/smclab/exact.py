"""Exact inference engines used as ground truth.

Kalman filter / Rauch-Tung-Striebel smoother for linear-Gaussian models and
the forward-backward recursions for finite-state models.  Both run the exact
propagation/update recursions that the Monte Carlo algorithms approximate,
so every stochastic module in this package is tested against them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateModelError, NumericalError
from .models import FiniteHMM, LinearGaussianSSM
from .util import gaussian_logpdf, log_sum_exp, validate_symmetric

__all__ = [
    "GaussianBelief",
    "DiscreteBelief",
    "kalman_predict",
    "kalman_update",
    "run_kalman_filter",
    "kalman_smoother",
    "KalmanResult",
    "hmm_forward",
    "hmm_backward_smooth",
]


@dataclass(frozen=True)
class GaussianBelief:
    """Mean vector and covariance matrix of a Gaussian state belief."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        P = np.atleast_2d(np.asarray(self.cov, dtype=float))
        validate_symmetric(P, "cov")
        P = 0.5 * (P + P.T)
        vals = np.linalg.eigvalsh(P)
        if vals[0] < -1e-10 * max(1.0, float(vals[-1])):
            raise ValueError(f"cov must be PSD (min eigenvalue {vals[0]:.3e})")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class DiscreteBelief:
    """Probability vector over the K state labels."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if (p < -1e-15).any():
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", np.clip(p, 0.0, None))


def kalman_predict(b: GaussianBelief, F: np.ndarray, V: np.ndarray) -> GaussianBelief:
    """Propagate N(m, P) through x' = F x + N(0, V)."""
    F = np.atleast_2d(F)
    V = np.atleast_2d(V)
    return GaussianBelief(F @ b.mean, F @ b.cov @ F.T + V)


def kalman_update(b: GaussianBelief, y, H: np.ndarray, R: np.ndarray):
    """Condition N(m, P) on y = H x + N(0, R).

    Returns the posterior belief and the log-evidence increment
    log N(y; H m, H P H' + R).  The covariance is updated in Joseph form,
    which stays PSD under round-off.
    """
    H = np.atleast_2d(H)
    R = np.atleast_2d(R)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    P = b.cov
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    try:
        cS = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    K = cho_solve(cS, (P @ H.T).T).T
    innov = y - H @ b.mean
    mean = b.mean + K @ innov
    I_KH = np.eye(b.dim) - K @ H
    cov = I_KH @ P @ I_KH.T + K @ R @ K.T
    log_evidence = float(gaussian_logpdf(innov, np.tril(cS[0])))
    return GaussianBelief(mean, cov), log_evidence


@dataclass(frozen=True)
class KalmanResult:
    """Filtered beliefs (index 0 is the prior), predicted beliefs and evidence terms."""

    filtered: list
    predicted: list
    log_evidence_increments: np.ndarray

    @property
    def total_log_evidence(self) -> float:
        return float(np.sum(self.log_evidence_increments))


def run_kalman_filter(model: LinearGaussianSSM, ys: np.ndarray) -> KalmanResult:
    """Exact filter pass over observation rows y_1..y_T."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    belief = GaussianBelief(model.m0, model.P0)
    filtered = [belief]
    predicted = []
    increments = []
    for y in ys:
        pred = kalman_predict(belief, model.F, model.V)
        predicted.append(pred)
        belief, inc = kalman_update(pred, y, model.H, model.R)
        filtered.append(belief)
        increments.append(inc)
    return KalmanResult(filtered, predicted, np.asarray(increments))


def kalman_smoother(result: KalmanResult, F: np.ndarray) -> list:
    """Backward (RTS) pass producing the exact marginals of X_n given y_{1:T}."""
    F = np.atleast_2d(F)
    filtered, predicted = result.filtered, result.predicted
    T = len(predicted)
    smoothed = [None] * (T + 1)
    smoothed[T] = filtered[T]
    for n in range(T - 1, -1, -1):
        Pf = filtered[n].cov
        pred = predicted[n]
        cross = Pf @ F.T
        try:
            gain = cho_solve(cho_factor(pred.cov, lower=True), cross.T).T
        except np.linalg.LinAlgError:
            warnings.warn(
                "singular predicted covariance in the backward pass; "
                "falling back to a pseudo-inverse",
                RuntimeWarning,
                stacklevel=2,
            )
            gain = cross @ np.linalg.pinv(pred.cov)
        mean = filtered[n].mean + gain @ (smoothed[n + 1].mean - pred.mean)
        cov = Pf + gain @ (smoothed[n + 1].cov - pred.cov) @ gain.T
        smoothed[n] = GaussianBelief(mean, 0.5 * (cov + cov.T))
    return smoothed


def hmm_forward(model: FiniteHMM, ys: np.ndarray):
    """Exact filter marginals (row 0 is the prior) and the exact log-likelihood.

    The recursion runs in log space, so long series cannot underflow.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    log_alpha = model._log_init.copy()
    beliefs = [DiscreteBelief(model.init_probs)]
    loglik = 0.0
    for t, y in enumerate(ys):
        pred = log_sum_exp(log_alpha[:, None] + model._log_trans, axis=0)
        post = pred + model.emission_logpdf_all(y)
        inc = log_sum_exp(post)
        if not np.isfinite(inc):
            raise DegenerateModelError(
                f"observation at step {t + 1} has zero probability under every state"
            )
        log_alpha = post - inc
        loglik += inc
        beliefs.append(DiscreteBelief(np.exp(log_alpha) / np.exp(log_alpha).sum()))
    return beliefs, float(loglik)


def hmm_backward_smooth(model: FiniteHMM, ys: np.ndarray):
    """Exact smoothed marginals of X_n given y_{1:T} via forward-backward."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    T = ys.shape[0]
    forward, _ = hmm_forward(model, ys)
    log_beta = np.zeros(model.n_states)
    smoothed = [None] * (T + 1)
    smoothed[T] = forward[T]
    for n in range(T - 1, -1, -1):
        emit = model.emission_logpdf_all(ys[n])
        log_beta = log_sum_exp(model._log_trans + (emit + log_beta)[None, :], axis=1)
        with np.errstate(divide="ignore"):
            log_post = np.log(forward[n].probs) + log_beta
        log_post -= log_sum_exp(log_post)
        p = np.exp(log_post)
        smoothed[n] = DiscreteBelief(p / p.sum())
    return smoothed
