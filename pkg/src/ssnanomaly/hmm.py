"""Gaussian hidden Markov models with diagonal emissions.

Used by the residual HMM detector (one dimension, one sequence per site,
shared parameters) and by the multivariate event model (``D`` sites, one
sequence).  Sequences are stacked into an ``(N, T, D)`` array and processed
together.  Missing observations (``NaN``) contribute no emission
information.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BaumWelchNotConverged, SingularEmission

LOG_2PI = np.log(2 * np.pi)


def as_batch(X) -> np.ndarray:
    """Coerce (T,), (T, D) or (N, T, D) input to an (N, T, D) float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return X[None, :, None]
    if X.ndim == 2:
        return X[None]
    return X


@dataclass
class GaussianHMM:
    """``L``-state HMM with ``D``-dimensional diagonal Gaussian emissions.

    Attributes
    ----------
    pi : ndarray (L,)
    A : ndarray (L, L)
        Row-stochastic transition matrix.
    means, variances : ndarray (L, D)
    """

    pi: np.ndarray
    A: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def log_emission(self, X) -> np.ndarray:
        """Log emission densities, shape (N, T, L)."""
        X = as_batch(X)
        obs = ~np.isnan(X)
        Xz = np.where(obs, X, 0.0)
        diff = Xz[:, :, None, :] - self.means
        ll = -0.5 * (diff ** 2 / self.variances + np.log(self.variances) + LOG_2PI)
        return np.where(obs[:, :, None, :], ll, 0.0).sum(axis=3)


def forward_backward(logB: np.ndarray, A: np.ndarray, pi: np.ndarray):
    """Scaled forward-backward pass over a batch of sequences.

    Parameters
    ----------
    logB : ndarray (N, T, L) or (T, L)

    Returns
    -------
    loglik : float
        Summed over sequences.
    gamma : ndarray, same shape as ``logB``
        Smoothed state probabilities.
    xi_sum : ndarray (L, L)
        Expected transition counts summed over time and sequences.
    """
    single = logB.ndim == 2
    if single:
        logB = logB[None]
    N, T, L = logB.shape
    shift = logB.max(axis=2, keepdims=True)
    B = np.exp(logB - shift)
    alpha = np.empty((N, T, L))
    c = np.empty((N, T))
    a = pi * B[:, 0]
    c[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / c[:, 0, None]
    for t in range(1, T):
        a = (alpha[:, t - 1] @ A) * B[:, t]
        c[:, t] = a.sum(axis=1)
        alpha[:, t] = a / c[:, t, None]
    beta = np.empty((N, T, L))
    beta[:, -1] = 1.0
    xi_sum = np.zeros((L, L))
    for t in range(T - 2, -1, -1):
        bb = B[:, t + 1] * beta[:, t + 1]
        beta[:, t] = (bb @ A.T) / c[:, t + 1, None]
        xi_sum += A * np.einsum("ni,nj->ij", alpha[:, t] / c[:, t + 1, None], bb)
    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    loglik = float(np.log(c).sum() + shift.sum())
    return loglik, (gamma[0] if single else gamma), xi_sum


def log_likelihood(model: GaussianHMM, X) -> float:
    return forward_backward(model.log_emission(X), model.A, model.pi)[0]


def posteriors(model: GaussianHMM, X) -> np.ndarray:
    """Smoothed state probabilities, shape (N, T, L)."""
    return forward_backward(model.log_emission(X), model.A, model.pi)[1]


def baum_welch(X, init: GaussianHMM, max_iter: int = 500, tol: float = 1e-6,
               var_floor: float = 1e-12):
    """EM fit over sequences sharing one parameter set.

    Returns ``(model, loglik, converged, trace)``; ``trace`` holds the
    log-likelihood before each M-step and is non-decreasing.
    """
    X = as_batch(X)
    obs = ~np.isnan(X)
    Xz = np.where(obs, X, 0.0)
    m = GaussianHMM(init.pi.copy(), init.A.copy(), init.means.copy(), init.variances.copy())
    prev = -np.inf
    trace = []
    converged = False
    for _ in range(max_iter):
        ll, g, xi = forward_backward(m.log_emission(X), m.A, m.pi)
        if not np.isfinite(ll):
            raise SingularEmission("non-finite HMM log-likelihood")
        trace.append(ll)
        if abs(ll - prev) <= tol * max(1.0, abs(ll)):
            converged = True
            break
        prev = ll
        pi = np.maximum(g[:, 0].sum(axis=0), 1e-300)
        m.pi = pi / pi.sum()
        rows = xi.sum(axis=1, keepdims=True)
        A = np.where(rows > 0, xi / np.where(rows > 0, rows, 1.0), m.A)
        m.A = A / A.sum(axis=1, keepdims=True)
        w = np.einsum("ntl,ntd->ld", g, obs)
        sx = np.einsum("ntl,ntd->ld", g, Xz)
        sxx = np.einsum("ntl,ntd->ld", g, Xz ** 2)
        ok = w > 1e-12
        wsafe = np.where(ok, w, 1.0)
        mu = np.where(ok, sx / wsafe, m.means)
        var = np.where(ok, sxx / wsafe - mu ** 2, m.variances)
        m.means = mu
        m.variances = np.maximum(var, var_floor)
    return m, trace[-1], converged, trace


def fit_best(X, n_states: int, seed: int = 0, restarts: int = 20, max_iter: int = 500,
             tol: float = 1e-6, var_floor_rel: float = 1e-6):
    """Baum-Welch from a quantile start plus ``restarts`` random starts.

    The first start uses per-dimension quantile means, pooled variances and
    uniform transitions.  The converged fit with the best likelihood wins.

    Raises
    ------
    SingularEmission
        If the data have zero variance in every dimension.
    BaumWelchNotConverged
        If no start converges within ``max_iter``.
    """
    X = as_batch(X)
    N, T, D = X.shape
    L = n_states
    pooled = X.reshape(N * T, D)
    var = np.nanvar(pooled, axis=0)
    if not np.any(var > 0):
        raise SingularEmission("observations have zero variance")
    var = np.where(var > 0, var, np.min(var[var > 0]))
    floor = max(var_floor_rel * float(np.min(var)), 1e-12)
    rng = np.random.default_rng(seed)

    qs = (np.arange(L) + 0.5) / L
    starts = [GaussianHMM(np.full(L, 1.0 / L), np.full((L, L), 1.0 / L),
                          np.nanquantile(pooled, qs, axis=0).reshape(L, D),
                          np.tile(var, (L, 1)))]
    complete = pooled[~np.isnan(pooled).any(axis=1)]
    if complete.shape[0] == 0:
        complete = np.where(np.isnan(pooled), np.nanmean(pooled, axis=0), pooled)
    for _ in range(restarts):
        idx = rng.choice(complete.shape[0], size=L, replace=complete.shape[0] < L)
        stay = rng.uniform(0.5, 0.99) if L > 1 else 1.0
        A = np.full((L, L), (1 - stay) / max(L - 1, 1))
        np.fill_diagonal(A, stay)
        starts.append(GaussianHMM(rng.dirichlet(np.ones(L)), A, complete[idx].copy(),
                                  np.tile(var, (L, 1)) * rng.uniform(0.2, 2.0, size=(L, 1))))
    best = None
    for init in starts:
        try:
            m, ll, conv, trace = baum_welch(X, init, max_iter=max_iter, tol=tol, var_floor=floor)
        except SingularEmission:
            continue
        if conv and (best is None or ll > best[1]):
            best = (m, ll, trace)
    if best is None:
        raise BaumWelchNotConverged(f"no Baum-Welch start converged in {max_iter} iterations")
    return best
