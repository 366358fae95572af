"""Stochastic (perturbed-observation) ensemble Kalman filter.

Members are propagated through the model transition like particle-filter
particles, but the update is a Monte Carlo Kalman step: the gain is built
from the (optionally regularized) sample covariance of the forecast and each
member assimilates an independently perturbed observation.  Exact for
linear-Gaussian models as the ensemble grows; for non-Gaussian forecasts
only the location of the ensemble responds to the observation (see
``scripts/enkf_bimodal_demo.py``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky

from .errors import NumericalError
from .models import LinearGaussianSSM, StateSpaceModel

__all__ = [
    "EnkfEnsemble",
    "EnkfConfig",
    "EnkfTrace",
    "kalman_gain",
    "enkf_step",
    "run_enkf",
    "gaspari_cohn",
]


@dataclass(frozen=True)
class EnkfEnsemble:
    """Equally weighted state vectors; N >= 2 so a sample covariance exists."""

    states: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        if s.shape[0] < 2:
            raise ValueError("an EnKF ensemble needs at least 2 members")
        object.__setattr__(self, "states", s)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    def mean(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.states, rowvar=False, ddof=1).reshape(
            self.states.shape[1], self.states.shape[1]
        )


def gaspari_cohn(r: np.ndarray) -> np.ndarray:
    """Compactly supported correlation function (support radius 2)."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    near = r <= 1.0
    far = (r > 1.0) & (r < 2.0)
    x = r[near]
    out[near] = 1.0 - 5.0 / 3.0 * x**2 + 5.0 / 8.0 * x**3 + 0.5 * x**4 - 0.25 * x**5
    x = r[far]
    out[far] = (
        4.0 - 5.0 * x + 5.0 / 3.0 * x**2 + 5.0 / 8.0 * x**3 - 0.5 * x**4 + x**5 / 12.0
        - 2.0 / (3.0 * x)
    )
    return out


@dataclass(frozen=True)
class EnkfConfig:
    """Observation operator, noise covariance and forecast-covariance regularization.

    ``shrinkage`` blends the sample covariance towards its diagonal,
    P <- (1 - lam) P + lam diag(P); ``taper_radius`` multiplies entry (i, j)
    by a compactly supported correlation of |i - j| / radius.  Both default
    off, which is the exact setting for the linear-Gaussian reference tests.
    """

    H: np.ndarray
    R: np.ndarray
    shrinkage: float = 0.0
    taper_radius: float | None = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "R", R)
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in [0, 1]")
        if self.taper_radius is not None and self.taper_radius <= 0:
            raise ValueError("taper_radius must be positive")
        try:
            object.__setattr__(self, "_chol_R", cholesky(R, lower=True))
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc

    @classmethod
    def for_model(cls, model: LinearGaussianSSM, **kwargs) -> "EnkfConfig":
        return cls(model.H, model.R, **kwargs)

    def regularize(self, cov: np.ndarray) -> np.ndarray:
        out = cov
        if self.shrinkage > 0.0:
            out = (1.0 - self.shrinkage) * out + self.shrinkage * np.diag(np.diag(out))
        if self.taper_radius is not None:
            d = out.shape[0]
            dist = np.abs(np.arange(d)[:, None] - np.arange(d)[None, :])
            out = out * gaspari_cohn(dist / self.taper_radius)
        return out


def kalman_gain(cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    """P H' (H P H' + R)^{-1} via a symmetric positive-definite solve."""
    S = H @ cov @ H.T + R
    S = 0.5 * (S + S.T)
    try:
        cS = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    return cho_solve(cS, (cov @ H.T).T).T


def apply_update(states: np.ndarray, gain: np.ndarray, y: np.ndarray,
                 H: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Member-wise update x + K (y - H x + eps)."""
    innov = y - states @ H.T + eps
    return states + innov @ gain.T


def enkf_step(ens: EnkfEnsemble, y, model: StateSpaceModel, cfg: EnkfConfig,
              rng: np.random.Generator) -> EnkfEnsemble:
    """Propagate every member, then assimilate y with perturbed observations."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    step = ens.step_index + 1
    forecast = model.sample_transition(rng, ens.states)
    if not np.isfinite(forecast).all():
        raise NumericalError(f"non-finite forecast states at step {step}")
    cov = np.cov(forecast, rowvar=False, ddof=1).reshape(
        forecast.shape[1], forecast.shape[1]
    )
    cov = cfg.regularize(cov)
    try:
        gain = kalman_gain(cov, cfg.H, cfg.R)
    except NumericalError as exc:
        raise NumericalError(f"{exc} (step {step})") from exc
    eps = rng.standard_normal((forecast.shape[0], cfg.H.shape[0])) @ cfg._chol_R.T
    return EnkfEnsemble(apply_update(forecast, gain, y, cfg.H, eps), step)


@dataclass
class EnkfTrace:
    """Per-step ensemble mean and covariance (steps 1..T)."""

    means: np.ndarray
    covs: np.ndarray
    ensembles: list | None = None

    @property
    def n_steps(self) -> int:
        return self.means.shape[0]


def run_enkf(model: StateSpaceModel, ys: np.ndarray, n_members: int, cfg: EnkfConfig,
             rng: np.random.Generator, store_ensembles: bool = False) -> EnkfTrace:
    """Full EnKF pass over observation rows y_1..y_T."""
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    T = ys.shape[0]
    ens = EnkfEnsemble(model.sample_initial(rng, n_members), 0)
    d = ens.states.shape[1]
    means = np.empty((T, d))
    covs = np.empty((T, d, d))
    stored = [ens] if store_ensembles else None
    for t in range(T):
        ens = enkf_step(ens, ys[t], model, cfg, rng)
        means[t] = ens.mean()
        covs[t] = ens.cov()
        if stored is not None:
            stored.append(ens)
    return EnkfTrace(means, covs, stored)
