"""Independent oracles used to freeze expected values in the tests.

Everything here is deliberately brute force (path enumeration, joint-Gaussian
conditioning, textbook scalar recursions) and never calls the library code
paths it is used to check.
"""

from __future__ import annotations

import itertools
from math import exp, log, pi, sqrt

import numpy as np


def enumerate_hmm(init_probs, trans, emit_loglik):
    """Exhaustive-path filtering/smoothing for a finite HMM.

    ``emit_loglik`` has shape (T, K): log g(y_t | state k).  Returns
    (filtered marginals (T+1, K), smoothed marginals (T+1, K), log-likelihood),
    with row 0 the prior.
    """
    init_probs = np.asarray(init_probs, dtype=float)
    trans = np.asarray(trans, dtype=float)
    emit = np.asarray(emit_loglik, dtype=float)
    T, K = emit.shape

    def path_weight(path):
        w = log(init_probs[path[0]]) if init_probs[path[0]] > 0 else -np.inf
        for t in range(1, len(path)):
            p = trans[path[t - 1], path[t]]
            w += log(p) if p > 0 else -np.inf
            w += emit[t - 1, path[t]]
        return w

    filtered = np.zeros((T + 1, K))
    filtered[0] = init_probs
    for n in range(1, T + 1):
        mass = np.zeros(K)
        for path in itertools.product(range(K), repeat=n + 1):
            w = path_weight(path)
            if np.isfinite(w):
                mass[path[-1]] += exp(w)
        filtered[n] = mass / mass.sum()

    smoothed_mass = np.zeros((T + 1, K))
    total = 0.0
    for path in itertools.product(range(K), repeat=T + 1):
        w = path_weight(path)
        if np.isfinite(w):
            pw = exp(w)
            total += pw
            for n, state in enumerate(path):
                smoothed_mass[n, state] += pw
    smoothed = smoothed_mass / total
    return filtered, smoothed, log(total)


def joint_gaussian_smoother(F, V, H, R, m0, P0, ys):
    """Smoothing moments by conditioning one big joint Gaussian (scalar state).

    Builds the exact joint law of (X_0..X_T, Y_1..Y_T) from the defining
    linear map of iid standard normals, then conditions on the observations.
    Returns (smoothed means (T+1,), smoothed variances (T+1,), log p(y_{1:T})).
    """
    F, V, H, R, m0, P0 = (float(np.asarray(a).reshape(-1)[0]) for a in (F, V, H, R, m0, P0))
    ys = np.asarray(ys, dtype=float).reshape(-1)
    T = ys.shape[0]
    nz = 1 + 2 * T  # z0, w_1..w_T, v_1..v_T
    A = np.zeros((T + 1, nz))
    mean_x = np.zeros(T + 1)
    A[0, 0] = sqrt(P0)
    mean_x[0] = m0
    for t in range(1, T + 1):
        A[t] = F * A[t - 1]
        A[t, t] = sqrt(V)
        mean_x[t] = F * mean_x[t - 1]
    C = H * A[1:]
    for t in range(T):
        C[t, 1 + T + t] = sqrt(R)
    mean_y = H * mean_x[1:]

    S_xx = A @ A.T
    S_xy = A @ C.T
    S_yy = C @ C.T
    resid = ys - mean_y
    solve = np.linalg.solve(S_yy, resid)
    smoothed_mean = mean_x + S_xy @ solve
    smoothed_cov = S_xx - S_xy @ np.linalg.solve(S_yy, S_xy.T)

    sign, logdet = np.linalg.slogdet(S_yy)
    assert sign > 0
    log_evidence = -0.5 * (resid @ solve + logdet + T * log(2 * pi))
    return smoothed_mean, np.diag(smoothed_cov), float(log_evidence)


def scalar_kalman_loglik(F, V, H, R, m0, P0, ys) -> float:
    """Textbook scalar prediction-error decomposition, in plain Python floats."""
    F, V, H, R = float(F), float(V), float(H), float(R)
    m, P = float(m0), float(P0)
    total = 0.0
    for y in np.asarray(ys, dtype=float).reshape(-1):
        m_pred = F * m
        P_pred = F * F * P + V
        S = H * H * P_pred + R
        innov = y - H * m_pred
        total += -0.5 * (log(2 * pi * S) + innov * innov / S)
        K = P_pred * H / S
        m = m_pred + K * innov
        P = (1.0 - K * H) * P_pred
    return total


def scalar_kalman_means_sds(F, V, H, R, m0, P0, ys):
    """Filtered means and SDs from the same scalar recursion."""
    F, V, H, R = float(F), float(V), float(H), float(R)
    m, P = float(m0), float(P0)
    means, sds = [], []
    for y in np.asarray(ys, dtype=float).reshape(-1):
        m_pred = F * m
        P_pred = F * F * P + V
        S = H * H * P_pred + R
        K = P_pred * H / S
        m = m_pred + K * (y - H * m_pred)
        P = (1.0 - K * H) * P_pred
        means.append(m)
        sds.append(sqrt(P))
    return np.asarray(means), np.asarray(sds)


def mcmc_ess(x: np.ndarray) -> float:
    """Effective sample size of a Markov chain (Geyer initial positive sequence)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.shape[0]
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        return 1.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # sum consecutive lag pairs while they stay positive
    tau = 1.0
    for k in range(1, n // 2):
        pair = rho[2 * k - 1] + rho[2 * k]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
    return max(1.0, n / tau)


def mcmc_se(x: np.ndarray) -> float:
    """Autocorrelation-adjusted standard error of the chain mean."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(np.std(x, ddof=1) / sqrt(mcmc_ess(x)))


def bootstrap_se(values: np.ndarray, stat, n_boot: int, rng) -> float:
    """Standard error of a statistic by nonparametric bootstrap over rows."""
    values = np.asarray(values)
    n = values.shape[0]
    idx = rng.integers(0, n, size=(n_boot, n))
    reps = np.array([stat(values[row]) for row in idx])
    return float(reps.std(ddof=1))


def exact_marginal_mh(loglik, prior_logpdf, init_theta, scale, n_iters, burn_in, rng):
    """Plain random-walk MH on a scalar parameter with an exact likelihood.

    Written independently of the library's chain code so the PMMH comparison
    is a genuine two-route check.
    """
    theta = float(init_theta)
    ll = loglik(theta)
    lp = prior_logpdf(theta)
    out = np.empty(n_iters - burn_in)
    for i in range(n_iters):
        prop = theta + scale * rng.standard_normal()
        lp_prop = prior_logpdf(prop)
        if lp_prop > -np.inf:
            ll_prop = loglik(prop)
            if log(rng.random()) < (ll_prop + lp_prop) - (ll + lp):
                theta, ll, lp = prop, ll_prop, lp_prop
        if i >= burn_in:
            out[i - burn_in] = theta
    return out
