"""Preprocessing for multi-site level data: imputation, alignment, events.

Three steps applied to a sites-by-time level matrix:

1. ``impute_multivariate`` fills gaps from the cross-site Gaussian
   structure, blended with a per-site smoothed temporal trend.
2. ``cluster_sites`` groups sites by dynamic time warping distance between
   their standardized series.
3. ``detect_events_mhmm`` labels every time point "ambient" or "event" with
   a two-state multivariate HMM sharing one hidden chain across sites.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.interpolate import make_smoothing_spline
from scipy.spatial.distance import squareform

from . import hmm as _hmm
from .errors import DataError, EmptySeries, InsufficientData, SingularEmission

__all__ = [
    "EventLabels",
    "SiteClustering",
    "impute_multivariate",
    "dtw_distance",
    "dtw_matrix",
    "cluster_sites",
    "detect_events_mhmm",
]

AMBIENT = "ambient"
EVENT = "event"


@dataclass(frozen=True, eq=False)
class EventLabels:
    """Per-time catchment state.

    Attributes
    ----------
    state : ndarray of str (T,)
        ``"ambient"`` or ``"event"``.
    probability : ndarray (T,)
        Smoothed probability of the event state; ``state`` is ``"event"``
        exactly when it is at least 0.5.
    """

    state: np.ndarray
    probability: np.ndarray

    @property
    def is_event(self) -> np.ndarray:
        return self.state == EVENT


@dataclass(frozen=True, eq=False)
class SiteClustering:
    """DTW distances, the average-linkage tree and a k-cluster cut."""

    distances: np.ndarray
    linkage: Optional[np.ndarray]
    labels: np.ndarray
    k: int

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


# ---------------------------------------------------------------------------
# imputation
# ---------------------------------------------------------------------------


def _linear_fill(y: np.ndarray) -> np.ndarray:
    t = np.arange(y.size)
    ok = ~np.isnan(y)
    return np.interp(t, t[ok], y[ok])


def _trend(y: np.ndarray) -> np.ndarray:
    """Cubic smoothing spline through the observed points (GCV penalty)."""
    t = np.arange(y.size, dtype=float)
    ok = ~np.isnan(y)
    if ok.sum() < 5:
        return _linear_fill(y)
    try:
        return make_smoothing_spline(t[ok], y[ok])(t)
    except (ValueError, np.linalg.LinAlgError):
        return _linear_fill(y)


def _conditional(mu, sigma, x, obs):
    """Conditional mean and covariance of the missing part of ``x``."""
    m = ~obs
    if not obs.any():
        return mu.copy(), sigma.copy()
    soo = sigma[np.ix_(obs, obs)]
    smo = sigma[np.ix_(m, obs)]
    k = np.linalg.solve(soo, smo.T).T
    mean = mu[m] + k @ (x[obs] - mu[obs])
    cov = sigma[np.ix_(m, m)] - k @ smo.T
    return mean, cov


def _em_gaussian(Y: np.ndarray, max_iter: int, tol: float, ridge: float):
    """EM estimate of mean and covariance for rows of ``Y`` (T, S) with NaNs."""
    T, S = Y.shape
    miss = np.isnan(Y)
    mu = np.nanmean(Y, axis=0)
    sigma = np.diag(np.nanvar(Y, axis=0))
    scale = float(np.mean(np.diag(sigma))) or 1.0
    patterns = {}
    for t in range(T):
        patterns.setdefault(miss[t].tobytes(), []).append(t)
    for _ in range(max_iter):
        sx = np.zeros(S)
        sxx = np.zeros((S, S))
        for rows in patterns.values():
            rows = np.asarray(rows)
            o = ~miss[rows[0]]
            X = Y[rows].copy()
            if o.all():
                sx += X.sum(axis=0)
                sxx += X.T @ X
                continue
            m = ~o
            if o.any():
                soo = sigma[np.ix_(o, o)]
                k = np.linalg.solve(soo, sigma[np.ix_(m, o)].T).T
                X[:, m] = mu[m] + (X[:, o] - mu[o]) @ k.T
                cm = sigma[np.ix_(m, m)] - k @ sigma[np.ix_(o, m)]
            else:
                X[:, m] = mu
                cm = sigma.copy()
            sx += X.sum(axis=0)
            sxx += X.T @ X
            sxx[np.ix_(m, m)] += len(rows) * cm
        mu_new = sx / T
        sigma_new = sxx / T - np.outer(mu_new, mu_new)
        sigma_new = 0.5 * (sigma_new + sigma_new.T) + ridge * scale * np.eye(S)
        delta = max(np.max(np.abs(mu_new - mu)), np.max(np.abs(sigma_new - sigma)))
        mu, sigma = mu_new, sigma_new
        if delta <= tol * scale:
            break
    return mu, sigma


def impute_multivariate(series, blend: float = 0.5, max_iter: int = 200, tol: float = 1e-8,
                        ridge: float = 1e-10) -> np.ndarray:
    """Fill missing cells of an S x T matrix.

    Each missing cell gets ``blend * c + (1 - blend) * s`` where ``c`` is the
    conditional expectation given the sites observed at the same time
    (mean and covariance estimated by EM) and ``s`` is that site's cubic
    smoothing-spline trend.  Times with no site observed use per-site
    linear interpolation.  Observed cells are returned unchanged.

    Parameters
    ----------
    series : array-like (S, T)
    blend : float in [0, 1]
        Weight on the cross-site conditional expectation.
    ridge : float
        Relative diagonal load keeping the covariance invertible when sites
        are (nearly) collinear.

    Raises
    ------
    InsufficientData
        If some site has fewer than two observed values.
    """
    Y = np.array(series, dtype=float)
    if Y.ndim != 2:
        raise DataError("series must be an S x T matrix")
    if not 0.0 <= blend <= 1.0:
        raise DataError("blend must lie in [0, 1]")
    miss = np.isnan(Y)
    if not miss.any():
        return Y
    n_obs = (~miss).sum(axis=1)
    if np.any(n_obs < 2):
        bad = np.flatnonzero(n_obs < 2).tolist()
        raise InsufficientData(f"sites {bad} have fewer than two observed values")
    S, T = Y.shape
    out = Y.copy()
    mu, sigma = _em_gaussian(Y.T, max_iter, tol, ridge)
    empty = miss.all(axis=0)
    trend = np.vstack([_trend(Y[s]) if blend < 1 and miss[s].any() else np.zeros(T)
                       for s in range(S)])
    for t in np.flatnonzero(miss.any(axis=0) & ~empty):
        o = ~miss[:, t]
        cond, _ = _conditional(mu, sigma, Y[:, t], o)
        m = ~o
        out[m, t] = blend * cond + (1 - blend) * trend[m, t]
    if empty.any():
        for s in range(S):
            out[s, empty] = _linear_fill(Y[s])[empty]
    return out


# ---------------------------------------------------------------------------
# dynamic time warping
# ---------------------------------------------------------------------------


def dtw_distance(a, b, window: Optional[int] = None) -> float:
    """Dynamic time warping cost with absolute-difference local cost.

    Uses the symmetric step pattern where each of the horizontal, vertical
    and diagonal moves adds the local cost of the cell entered once.

    Parameters
    ----------
    a, b : 1-d array-like
    window : int, optional
        Sakoe-Chiba band half-width; cells with ``|i - j|`` above
        ``max(window, |len(a) - len(b)|)`` are excluded.

    Raises
    ------
    EmptySeries
        If either series is empty.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise EmptySeries("DTW needs two nonempty series")
    cost = np.abs(a[:, None] - b[None, :])
    if window is not None:
        w = max(int(window), abs(n - m))
        i, j = np.indices((n, m))
        cost = np.where(np.abs(i - j) <= w, cost, np.inf)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    # sweep anti-diagonals: every cell depends only on the two previous ones
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(D[i - 1, j - 1], D[i - 1, j]), D[i, j - 1])
        D[i, j] = cost[i - 1, j - 1] + best
    return float(D[n, m])


def _standardize(Y: np.ndarray) -> np.ndarray:
    mu = Y.mean(axis=1, keepdims=True)
    sd = Y.std(axis=1, keepdims=True)
    return (Y - mu) / np.where(sd > 0, sd, 1.0)


def dtw_matrix(Y, window: Optional[int] = None) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    S = Y.shape[0]
    D = np.zeros((S, S))
    for i in range(S):
        for j in range(i + 1, S):
            D[i, j] = D[j, i] = dtw_distance(Y[i], Y[j], window)
    return D


def cluster_sites(level, k: int, window: Optional[int] = None) -> SiteClustering:
    """Average-linkage clustering of sites on DTW distances.

    Each row is standardized (mean removed, divided by its sd) before the
    pairwise distances are computed.  The tree is cut to exactly ``k``
    clusters, labelled ``0..k-1`` in order of first appearance.
    """
    Y = np.asarray(level, dtype=float)
    if Y.ndim != 2:
        raise DataError("level must be an S x T matrix")
    if np.isnan(Y).any():
        raise DataError("level contains missing values; impute first")
    S = Y.shape[0]
    if not 1 <= k <= S:
        raise DataError(f"k must lie in [1, {S}]")
    D = dtw_matrix(_standardize(Y), window)
    if S == 1:
        return SiteClustering(D, None, np.zeros(1, dtype=int), 1)
    Z = linkage(squareform(D, checks=False), method="average")
    raw = cut_tree(Z, n_clusters=k).ravel()
    _, first = np.unique(raw, return_index=True)
    remap = {raw[i]: n for n, i in enumerate(sorted(first))}
    labels = np.array([remap[c] for c in raw], dtype=int)
    return SiteClustering(D, Z, labels, k)


# ---------------------------------------------------------------------------
# event identification
# ---------------------------------------------------------------------------


def detect_events_mhmm(level, L: int = 2, seed: int = 0, restarts: int = 20,
                       max_iter: int = 500, tol: float = 1e-7):
    """Label times as ambient or event with a multivariate Gaussian HMM.

    One hidden chain drives all sites; each state emits an S-dimensional
    Gaussian with diagonal covariance.  The state with the largest mean
    level averaged across sites is the event state.

    Returns
    -------
    (EventLabels, GaussianHMM or None)
        The model is ``None`` when the data are constant.
    """
    Y = np.asarray(level, dtype=float)
    if Y.ndim != 2:
        raise DataError("level must be an S x T matrix")
    if np.isnan(Y).any():
        raise DataError("level contains missing values; impute first")
    if L < 2:
        raise DataError("L must be >= 2")
    T = Y.shape[1]
    try:
        model, _, _ = _hmm.fit_best(Y.T, L, seed=seed, restarts=restarts,
                                    max_iter=max_iter, tol=tol)
    except SingularEmission:
        return EventLabels(np.full(T, AMBIENT), np.zeros(T)), None
    event = int(np.argmax(model.means.mean(axis=1)))
    prob = _hmm.posteriors(model, Y.T)[0][:, event]
    state = np.where(prob >= 0.5, EVENT, AMBIENT)
    return EventLabels(state, prob), model
