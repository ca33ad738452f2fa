"""Unsupervised anomaly detectors.

* :func:`detect_ppd` -- observations outside their posterior predictive
  interval, optionally refitting once with the flagged cells removed.
* :func:`detect_mixture` -- Gaussian finite mixture on the residuals.
* :func:`detect_hmm` -- Gaussian HMM on per-site residual series.
* :func:`detect_arima` -- per-site ARIMA one-step prediction intervals
  (purely temporal benchmark).

The residual-based detectors compare the ``K``/``L`` component fit against a
single Gaussian by BIC; when one Gaussian explains the residuals no cell is
flagged.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter
from scipy.special import logsumexp, ndtr

from . import hmm as _hmm
from .errors import (
    AllModelsFailed,
    DataError,
    DegenerateComponent,
    EmNotConverged,
    RefitFailed,
    SSNAnomalyError,
)
from .model import ObservationSet, PredictiveSummary

__all__ = [
    "AnomalyLabels",
    "MixtureFit",
    "HmmFit",
    "detect_ppd",
    "detect_mixture",
    "detect_hmm",
    "detect_arima",
    "ArimaOrder",
]

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)
FLAG_ANOMALY, FLAG_NORMAL, FLAG_MISSING = 1, 0, -1


@dataclass(frozen=True, eq=False)
class AnomalyLabels:
    """Per-cell detector output, arrays of shape (S, T).

    ``flag`` is 1 (anomalous), 0 (normal) or -1 (missing).  ``score`` is a
    probability-like anomaly score, ``NaN`` for missing cells; every flagged
    cell has ``score >= threshold``.
    """

    flag: np.ndarray
    score: np.ndarray
    method: str
    iteration: int = 1
    threshold: float = 0.5

    @property
    def flagged(self) -> np.ndarray:
        return self.flag == FLAG_ANOMALY

    @property
    def observed(self) -> np.ndarray:
        return self.flag != FLAG_MISSING

    @property
    def flag_rate(self) -> float:
        n = self.observed.sum()
        return float(self.flagged.sum() / n) if n else 0.0

    def union(self, other: "AnomalyLabels", iteration: int) -> "AnomalyLabels":
        flag = np.where(self.flagged | other.flagged, FLAG_ANOMALY, self.flag)
        score = np.fmax(self.score, other.score)
        score = np.where(self.observed, score, np.nan)
        return AnomalyLabels(flag, score, self.method, iteration, min(self.threshold, other.threshold))


def _labels(flagged: np.ndarray, score: np.ndarray, missing: np.ndarray, method: str,
            iteration: int, threshold: float) -> AnomalyLabels:
    flag = np.where(missing, FLAG_MISSING, np.where(flagged, FLAG_ANOMALY, FLAG_NORMAL)).astype(np.int8)
    score = np.where(missing, np.nan, score)
    flag.setflags(write=False)
    score.setflags(write=False)
    return AnomalyLabels(flag, score, method, iteration, threshold)


def _residual_matrix(residuals) -> np.ndarray:
    if isinstance(residuals, PredictiveSummary):
        return np.asarray(residuals.residual, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 1:
        r = r[None, :]
    if r.ndim != 2:
        raise DataError("residuals must be an S x T matrix")
    return r


# ---------------------------------------------------------------------------
# Method 1: posterior predictive intervals
# ---------------------------------------------------------------------------


def _ppd_flags(summary: PredictiveSummary, y: np.ndarray, iteration: int) -> AnomalyLabels:
    miss = np.isnan(y) | np.isnan(summary.pit)
    yz = np.where(miss, 0.0, y)
    outside = ~miss & ((yz < summary.lower) | (yz > summary.upper))
    score = np.abs(2.0 * np.where(miss, 0.5, summary.pit) - 1.0)
    score = np.where(outside, np.maximum(score, summary.level), score)
    return _labels(outside, score, miss, "ppd", iteration, summary.level)


def detect_ppd(summary: PredictiveSummary, level: Optional[float] = None, iterations: int = 1,
               refit: Optional[Callable[[np.ndarray], PredictiveSummary]] = None) -> AnomalyLabels:
    """Flag observations outside their central predictive interval.

    Parameters
    ----------
    summary : PredictiveSummary
        From :func:`ssnanomaly.model.posterior_predictive`.
    level : float, optional
        Must match ``summary.level`` when given.
    iterations : {1, 2}
        With 2, ``refit(mask)`` is called with the first-pass flags; it must
        refit the model with those cells treated as missing and return a new
        summary.  Flags from both passes are combined.
    """
    if level is not None and not np.isclose(level, summary.level):
        raise DataError(f"summary was built at level {summary.level}, not {level}")
    if iterations not in (1, 2):
        raise DataError("iterations must be 1 or 2")
    first = _ppd_flags(summary, summary.y, 1)
    if iterations == 1:
        return first
    if refit is None:
        raise DataError("iterations=2 needs a refit callback")
    try:
        second_summary = refit(first.flagged.copy())
    except SSNAnomalyError as exc:
        raise RefitFailed(f"refit after first PPD pass failed: {exc}") from exc
    # compare the original observations with the refitted intervals
    y_orig = np.where(np.isnan(second_summary.y), summary.y, second_summary.y)
    pit = second_summary.pit
    if np.isnan(pit).any():
        pit = np.where(np.isnan(pit) & ~np.isnan(y_orig),
                       _normal_pit(y_orig, second_summary), pit)
    second = _ppd_flags(PredictiveSummary(y_orig, second_summary.mean, second_summary.sd,
                                          second_summary.lower, second_summary.upper,
                                          y_orig - second_summary.mean, pit, second_summary.level),
                        y_orig, 2)
    return first.union(second, iteration=2)


def _normal_pit(y, s: PredictiveSummary):
    sd = np.where(s.sd > 0, s.sd, 1e-12)
    return ndtr((np.where(np.isnan(y), 0.0, y) - s.mean) / sd)


def make_refit(obs: ObservationSet, net, priors=None, cfg=None, level: float = 0.95,
               seed: int = 0) -> Callable[[np.ndarray], PredictiveSummary]:
    """Refit callback for :func:`detect_ppd` built on the full model."""
    from .model import posterior_predictive, sample_posterior

    def refit(mask: np.ndarray) -> PredictiveSummary:
        reduced = obs.with_missing(mask)
        post = sample_posterior(reduced, net, priors, cfg)
        return posterior_predictive(post, reduced, net, level=level, seed=seed)

    return refit


# ---------------------------------------------------------------------------
# Method 2: finite mixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MixtureFit:
    """Gaussian mixture on residuals, components sorted by ascending mean.

    ``anomalous`` lists the indices of all components but the heaviest.
    ``k_requested`` is the requested ``K``; ``len(means)`` is the number
    retained after BIC selection.
    """

    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    membership: np.ndarray
    anomalous: tuple
    loglik: float
    bic: float
    k_requested: int
    loglik_trace: tuple = field(default=(), repr=False)

    @property
    def n_components(self) -> int:
        return len(self.means)


def _mix_logp(e, w, mu, var):
    return (-0.5 * ((e[:, None] - mu) ** 2 / var + np.log(var) + LOG_2PI) + np.log(w))


def _em_mixture(e, w, mu, var, floor, max_iter, tol, fixed_w=False):
    trace = []
    prev = -np.inf
    converged = False
    for _ in range(max_iter):
        logp = _mix_logp(e, w, mu, var)
        lse = logsumexp(logp, axis=1)
        ll = float(lse.sum())
        if trace:
            assert ll >= prev - 1e-8 * max(1.0, abs(prev)), "EM log-likelihood decreased"
        trace.append(ll)
        if abs(ll - prev) <= tol * max(1.0, abs(ll)):
            converged = True
            break
        prev = ll
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8):
            raise DegenerateComponent("mixture component lost all responsibility")
        if not fixed_w:
            w = nk / e.size
        mu = resp.T @ e / nk
        var = np.maximum((resp * (e[:, None] - mu) ** 2).sum(axis=0) / nk, floor)
    return w, mu, var, trace, converged


def _fit_mixture_k(e, k, rng, restarts, max_iter, tol, floor, fixed_w=False):
    if k == 1:
        mu = np.array([e.mean()])
        var = np.array([max(e.var(), floor)])
        ll = float(_mix_logp(e, np.ones(1), mu, var)[:, 0].sum())
        return np.ones(1), mu, var, (ll,), True
    v = max(e.var(), floor)
    inits = [(np.full(k, 1.0 / k), np.quantile(e, (np.arange(k) + 0.5) / k), np.full(k, v))]
    for _ in range(restarts):
        w0 = np.full(k, 1.0 / k) if fixed_w else rng.dirichlet(np.ones(k))
        inits.append((w0, rng.choice(e, size=k, replace=e.size < k),
                      v * rng.uniform(0.1, 2.0, size=k)))
    best = None
    any_conv = False
    for w0, m0, v0 in inits:
        try:
            w, mu, var, trace, conv = _em_mixture(e, w0, m0.astype(float), v0, floor, max_iter,
                                                  tol, fixed_w)
        except DegenerateComponent:
            continue
        any_conv |= conv
        if best is None or trace[-1] > best[3][-1]:
            best = (w, mu, var, tuple(trace), conv)
    if best is None:
        raise DegenerateComponent(f"every EM start for K={k} collapsed a component")
    if not any_conv:
        raise EmNotConverged(f"EM for K={k} did not converge in {max_iter} iterations")
    return best


def _fit_mixture(e, K, seed, restarts, max_iter, tol, select, fixed_w):
    n = e.size
    floor = max(1e-6 * float(e.var()), 1e-12)
    rng = np.random.default_rng(seed)
    fits = []
    ks = range(1, K + 1) if select else [K]
    for k in ks:
        if k > 1 and np.unique(e).size < k:
            continue
        try:
            w, mu, var, trace, _ = _fit_mixture_k(e, k, rng, restarts, max_iter, tol, floor,
                                                  fixed_w)
        except DegenerateComponent:
            continue
        except EmNotConverged:
            # during selection an unconverged candidate is dropped, not fatal
            if not select:
                raise
            log.warning("mixture with %d components did not converge; skipped", k)
            continue
        ll = trace[-1]
        bic = -2 * ll + (2 * k + (0 if fixed_w else k - 1)) * np.log(n)
        fits.append((bic, k, w, mu, var, trace, ll))
    if not fits:
        raise DegenerateComponent("no mixture fit succeeded")
    bic, k, w, mu, var, trace, ll = min(fits, key=lambda f: f[0])
    order = np.argsort(mu)
    return w[order], mu[order], var[order], ll, bic, trace


def _membership(e, w, mu, var):
    logp = _mix_logp(e, w, mu, var)
    return np.exp(logp - logsumexp(logp, axis=1)[:, None])


def detect_mixture(residuals, K: int = 3, iterations: int = 1, seed: int = 0, restarts: int = 20,
                   max_iter: int = 500, tol: float = 1e-7, select: bool = True,
                   weights: str = "equal"):
    """Finite Gaussian mixture on the empirical residuals.

    Parameters
    ----------
    residuals : PredictiveSummary or ndarray (S, T)
        ``NaN`` marks missing cells.
    K : int
        Maximum number of components (default 3: low tail, bulk, high tail).
    iterations : {1, 2}
        With 2 the flagged residuals are dropped, the mixture refit on the
        rest and both flag sets combined.
    select : bool
        Choose the number of components in ``1..K`` by BIC.
    weights : {"equal", "estimate"}
        ``"equal"`` keeps the prior membership probabilities at ``1/K``
        and only fits means and variances; ``"estimate"`` also fits the
        mixing proportions.  The reported weights are always the average
        posterior memberships, and the heaviest one marks the normal
        component.

    Returns
    -------
    (MixtureFit, AnomalyLabels)
        The fit is the final (last-iteration) one.
    """
    if K < 2:
        raise DataError("K must be >= 2")
    if iterations not in (1, 2):
        raise DataError("iterations must be 1 or 2")
    if weights not in ("equal", "estimate"):
        raise DataError("weights must be 'equal' or 'estimate'")
    fixed_w = weights == "equal"
    r = _residual_matrix(residuals)
    miss = np.isnan(r)
    if (~miss).sum() < 2:
        raise DataError("need at least two residuals")

    def one_pass(mask_fit, it):
        e = r[mask_fit]
        w, mu, var, ll, bic, trace = _fit_mixture(e, K, seed + it, restarts, max_iter, tol,
                                                  select, fixed_w)
        share = _membership(e, w, mu, var).mean(axis=0)
        dominant = int(np.argmax(share))
        anomalous = tuple(i for i in range(len(w)) if i != dominant)
        memb = np.zeros(r.shape + (len(w),))
        memb[~miss] = _membership(r[~miss], w, mu, var)
        memb[miss] = np.nan
        score = 1.0 - memb[..., dominant]
        flagged = ~miss & np.isin(np.nanargmax(np.where(miss[..., None], 0.0, memb), axis=-1), anomalous)
        fit = MixtureFit(mu, np.sqrt(var), share, memb, anomalous, ll, bic, K, trace)
        return fit, _labels(flagged, score, miss, "mixture", it, 0.5)

    fit, labels = one_pass(~miss, 1)
    if iterations == 2:
        keep = ~miss & ~labels.flagged
        if keep.sum() >= 2:
            fit, second = one_pass(keep, 2)
            labels = labels.union(second, iteration=2)
    return fit, labels


# ---------------------------------------------------------------------------
# Method 3: hidden Markov model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HmmFit:
    """Residual HMM shared across sites.

    ``state_probs`` has shape (S, T, L); ``anomalous`` holds the indices of
    the states treated as anomalous (empty if the single-state model won).
    """

    A: np.ndarray
    pi: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    state_probs: np.ndarray
    anomalous: tuple
    loglik: float
    bic: float
    loglik_trace: tuple = field(default=(), repr=False)

    @property
    def n_states(self) -> int:
        return len(self.means)


HMM_VAR_RATIO = 2.0
HMM_MEAN_SEP = 2.0


def _hmm_n_params(L: int) -> int:
    return (L - 1) + L * (L - 1) + 2 * L


def detect_hmm(residuals, L: int = 2, seed: int = 0, restarts: int = 20, max_iter: int = 500,
               tol: float = 1e-7, select: bool = True):
    """Gaussian HMM with unequal state variances on per-site residual series.

    Every site is an independent sequence; emission and transition
    parameters are shared.  The normal state is the one with the smallest
    emission variance (ties broken by ``|mean|``); the remaining states are
    anomalous.  A cell is flagged when its smoothed anomalous-state
    probability exceeds 0.5.

    With ``select`` the single-state model is returned when it wins on BIC,
    when no state is distinguishable from the normal one (variance ratio
    below ``HMM_VAR_RATIO`` and mean gap below ``HMM_MEAN_SEP`` normal-state
    sds), or when the anomalous states would hold at least half of the
    posterior mass.  Residual autocorrelation otherwise lets a second state
    split clean data into two overlapping halves.
    """
    if L < 2:
        raise DataError("L must be >= 2")
    r = _residual_matrix(residuals)
    miss = np.isnan(r)
    e = r[~miss]
    if e.size < 2:
        raise DataError("need at least two residuals")
    S, T = r.shape
    n = e.size
    var0 = float(e.var())
    ll1 = float(-0.5 * n * (np.log(2 * np.pi * max(var0, 1e-300)) + 1.0)) if var0 > 0 else np.inf
    bic1 = -2 * ll1 + 2 * np.log(n)

    def single_state():
        probs = np.where(miss[..., None], np.nan, 1.0)
        fit = HmmFit(np.ones((1, 1)), np.ones(1), np.array([e.mean()]), np.array([var0]),
                     probs, (), ll1, bic1)
        return fit, _labels(np.zeros_like(miss), np.zeros(r.shape), miss, "hmm", 1, 0.5)

    if var0 <= 0:
        return single_state()
    model, ll, trace = _hmm.fit_best(r[:, :, None], L, seed=seed, restarts=restarts,
                                     max_iter=max_iter, tol=tol)
    bic = -2 * ll + _hmm_n_params(L) * np.log(n)
    if select and bic >= bic1:
        return single_state()
    means = model.means[:, 0]
    variances = model.variances[:, 0]
    normal = min(range(L), key=lambda i: (variances[i], abs(means[i])))
    anomalous = tuple(i for i in range(L) if i != normal)
    if select:
        sd0 = np.sqrt(variances[normal])
        anomalous = tuple(i for i in anomalous
                          if variances[i] >= HMM_VAR_RATIO * variances[normal]
                          or abs(means[i] - means[normal]) >= HMM_MEAN_SEP * sd0)
        if not anomalous:
            return single_state()
    probs = _hmm.posteriors(model, r[:, :, None])
    score = probs[..., list(anomalous)].sum(axis=-1)
    # anomalies are the minority by definition; a split of the bulk is no detection
    if select and float(score[~miss].mean()) >= 0.5:
        return single_state()
    flagged = ~miss & (score > 0.5)
    probs = np.where(miss[..., None], np.nan, probs)
    fit = HmmFit(model.A, model.pi, means, variances, probs, anomalous, ll, bic, tuple(trace))
    return fit, _labels(flagged, score, miss, "hmm", 1, 0.5)


# ---------------------------------------------------------------------------
# Method 4: ARIMA benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArimaOrder:
    p: int
    d: int
    q: int
    aic: float


def _interpolate(y: np.ndarray) -> np.ndarray:
    ok = ~np.isnan(y)
    if ok.all():
        return y.copy()
    idx = np.arange(y.size)
    return np.interp(idx, idx[ok], y[ok])


def _choose_d(y: np.ndarray, d_max: int) -> int:
    from statsmodels.tsa.stattools import kpss

    d = 0
    x = y
    while d < d_max and x.size > 8:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                pval = kpss(x, regression="c", nlags="auto")[1]
            except (ValueError, OverflowError, np.linalg.LinAlgError):
                break
        if pval >= 0.05:
            break
        d += 1
        x = np.diff(x)
    return d


def _stationary(coefs) -> bool:
    if len(coefs) == 0:
        return True
    roots = np.roots(np.r_[1.0, -np.asarray(coefs)][::-1])
    return bool(np.all(np.abs(roots) > 1.0 + 1e-6))


def _css_residuals(params, z, p, q, with_mean):
    mu = params[0] if with_mean else 0.0
    ar = params[int(with_mean): int(with_mean) + p]
    ma = params[int(with_mean) + p:]
    e = lfilter(np.r_[1.0, -ar], np.r_[1.0, ma], z - mu)
    return e[p:]


def _css_fit(z, p, q, with_mean):
    k = p + q + int(with_mean)
    x0 = np.zeros(k)
    if with_mean:
        x0[0] = z.mean()

    def fun(params):
        ar = params[int(with_mean): int(with_mean) + p]
        ma = params[int(with_mean) + p:]
        e = _css_residuals(params, z, p, q, with_mean)
        penalty = 0.0
        if not _stationary(ar):
            penalty += 1e3
        if not _stationary(-np.asarray(ma)):
            penalty += 1e3
        return e * (1.0 + penalty) if penalty else e

    if k == 0:
        e = z[p:]
        return np.zeros(0), float(e @ e), e.size
    res = least_squares(fun, x0, method="lm" if z.size - p > k else "trf", max_nfev=200 * (k + 1))
    e = _css_residuals(res.x, z, p, q, with_mean)
    ar = res.x[int(with_mean): int(with_mean) + p]
    ma = res.x[int(with_mean) + p:]
    if not (_stationary(ar) and _stationary(-ma)) or not np.all(np.isfinite(e)):
        raise ArithmeticError("non-stationary or non-invertible CSS solution")
    return res.x, float(e @ e), e.size


def select_arima_order(y: np.ndarray, max_p: int = 3, max_q: int = 3, d_max: int = 1) -> ArimaOrder:
    """KPSS for ``d``, then the ``(p, q)`` minimizing the conditional-sum-of-squares AIC."""
    y = np.asarray(y, dtype=float)
    d = _choose_d(y, d_max)
    z = np.diff(y, n=d) if d else y
    with_mean = d == 0
    best = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            if z.size - p <= p + q + int(with_mean) + 1:
                continue
            try:
                _, ss, n = _css_fit(z, p, q, with_mean)
            except (ArithmeticError, ValueError, np.linalg.LinAlgError):
                continue
            if not (ss > 0 and np.isfinite(ss)):
                continue
            aic = n * np.log(ss / n) + 2 * (p + q + int(with_mean) + 1)
            if best is None or aic < best.aic:
                best = ArimaOrder(p, d, q, float(aic))
    if best is None:
        raise AllModelsFailed("no ARIMA order could be fitted")
    return best


def _one_step(y: np.ndarray, order: ArimaOrder):
    """In-sample one-step predictions and their standard deviations (ML fit)."""
    from statsmodels.tsa.arima.model import ARIMA

    trend = "c" if order.d == 0 else "n"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = ARIMA(y, order=(order.p, order.d, order.q), trend=trend).fit()
        pred = res.get_prediction()
        mean = np.asarray(pred.predicted_mean)
        sd = np.sqrt(np.asarray(pred.var_pred_mean))
    return mean, sd


def detect_arima(obs: Union[ObservationSet, np.ndarray], level: float = 0.95, max_p: int = 3,
                 max_q: int = 3, d_max: int = 1, return_orders: bool = False):
    """Per-site ARIMA benchmark; flags observations outside the one-step interval.

    Missing values are linearly interpolated for fitting only and are never
    flagged.  When no ARIMA order can be fitted for a site, a white-noise
    model (z-scores) is used for that site.
    """
    if not 0 < level < 1:
        raise DataError("level must lie in (0, 1)")
    Y = obs.y if isinstance(obs, ObservationSet) else np.asarray(obs, dtype=float)
    Y = np.atleast_2d(Y)
    S, T = Y.shape
    miss = np.isnan(Y)
    score = np.zeros((S, T))
    orders = []
    for s in range(S):
        if (~miss[s]).sum() < 3:
            orders.append(None)
            continue
        y = _interpolate(Y[s])
        try:
            order = select_arima_order(y, max_p, max_q, d_max)
            mean, sd = _one_step(y, order)
        except (AllModelsFailed, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("site %d: ARIMA failed (%s); using white-noise z-scores", s, exc)
            order = None
            mean = np.full(T, y.mean())
            sd = np.full(T, y.std() or 1.0)
        orders.append(order)
        sd = np.where(np.isfinite(sd) & (sd > 0), sd, np.inf)
        z = np.abs(y - mean) / sd
        score[s] = 2.0 * ndtr(z) - 1.0
    flagged = ~miss & (score > level)
    labels = _labels(flagged, score, miss, "arima", 1, level)
    return (labels, orders) if return_orders else labels
