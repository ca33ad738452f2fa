"""VAR(1) spatio-temporal stream-network model.

For sites ``s = 1..S`` and times ``t = 1..T``::

    y_t | y_{t-1} ~ N(mu_t, Sigma + sigma2_0 I)
    mu_t = X_t beta + Phi (y_{t-1} - X_{t-1} beta),     Phi = diag(phi)

with ``y_1 ~ N(X_1 beta, Sigma + sigma2_0 I)``.  ``Sigma`` is the mixture of
tail-up / tail-down / Euclidean exponential covariances from
:mod:`ssnanomaly.covariance`.

Inference is by Metropolis-within-Gibbs:

* ``beta`` -- exact Gaussian conditional draw,
* ``phi``  -- exact coordinate-wise truncated-normal conditional draws
  (Metropolis-corrected when the prior on ``atanh(phi)`` is normal),
* covariance parameters -- adaptive random-walk Metropolis on the log scale,
* missing ``y`` cells -- exact single-site Gaussian conditional draws.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr, ndtri

from .covariance import SpatialCovParams
from .errors import DataError, DivergentChain, InvalidConfig
from .network import StreamNetwork

__all__ = [
    "ObservationSet",
    "ModelParams",
    "Uniform",
    "Normal",
    "Gamma",
    "PriorSpec",
    "default_priors",
    "McmcConfig",
    "PosteriorSamples",
    "PredictiveSummary",
    "COMPONENTS",
    "log_likelihood",
    "sample_posterior",
    "posterior_predictive",
    "simulate_from_model",
]

LOG_2PI = np.log(2 * np.pi)

#: covariance component -> (sill name, range name)
COMPONENTS = {
    "tailup": ("sigma2_u", "alpha_u"),
    "taildown": ("sigma2_d", "alpha_d"),
    "euclid": ("sigma2_e", "alpha_e"),
}


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Response matrix plus covariates.

    Attributes
    ----------
    y : ndarray (S, T)
        Responses; ``NaN`` marks a missing cell.
    x : ndarray (S, T, p)
        Covariates.  Column 0 is conventionally the intercept.
    site_order : tuple of str
        Site ids aligning rows with a :class:`StreamNetwork`.
    time_index : ndarray (T,)
        Strictly increasing time stamps or ticks.
    y_prev, x_prev : ndarray (S,) and (S, p), optional
        Response and covariates at the time just before the first column.
        When given, the first time point is modelled conditionally on them
        instead of through the marginal spatial distribution, which lets
        consecutive batches of one series be fitted in sequence.
    """

    y: np.ndarray
    x: np.ndarray
    site_order: tuple = ()
    time_index: Optional[np.ndarray] = None
    y_prev: Optional[np.ndarray] = None
    x_prev: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 2:
            raise DataError("y must be an S x T matrix")
        S, T = y.shape
        x = np.array(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[:2] != (S, T) or x.ndim != 3 or x.shape[2] < 1:
            raise DataError(f"x must have shape (S, T, p) = ({S}, {T}, p), got {x.shape}")
        if S < 1 or T < 1:
            raise DataError("need S >= 1 and T >= 1")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates may not contain missing or non-finite values")
        if np.any(np.isinf(y)):
            raise DataError("y contains infinite values")
        site_order = tuple(self.site_order) or tuple(f"s{i + 1}" for i in range(S))
        if len(site_order) != S:
            raise DataError("site_order length does not match y")
        ti = np.arange(T) if self.time_index is None else np.asarray(self.time_index)
        if ti.shape != (T,):
            raise DataError("time_index length does not match y")
        if T > 1 and not np.all(ti[1:] > ti[:-1]):
            raise DataError("time_index must be strictly increasing")
        if (self.y_prev is None) != (self.x_prev is None):
            raise DataError("y_prev and x_prev must be given together")
        if self.y_prev is not None:
            yp = np.array(self.y_prev, dtype=float).reshape(-1)
            xp = np.array(self.x_prev, dtype=float)
            if xp.ndim == 1:
                xp = xp[:, None]
            if yp.shape != (S,) or xp.shape != (S, x.shape[2]):
                raise DataError("y_prev must have shape (S,) and x_prev (S, p)")
            if not (np.all(np.isfinite(yp)) and np.all(np.isfinite(xp))):
                raise DataError("y_prev and x_prev must be finite")
            yp.setflags(write=False)
            xp.setflags(write=False)
            object.__setattr__(self, "y_prev", yp)
            object.__setattr__(self, "x_prev", xp)
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "site_order", site_order)
        object.__setattr__(self, "time_index", ti)

    @property
    def S(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[2]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.y)

    def with_missing(self, mask: np.ndarray) -> "ObservationSet":
        """Copy with the cells in ``mask`` additionally set missing."""
        y = self.y.copy()
        y[np.asarray(mask, dtype=bool)] = np.nan
        return replace(self, y=y)

    @property
    def conditioned(self) -> bool:
        return self.y_prev is not None

    def time_slice(self, start: int, stop: int, link: bool = False) -> "ObservationSet":
        """Columns ``start:stop``.

        With ``link`` and ``start > 0`` the column before ``start`` becomes
        ``y_prev``/``x_prev`` (it must be fully observed).
        """
        yp = xp = None
        if link and start > 0:
            yp, xp = self.y[:, start - 1], self.x[:, start - 1]
        elif link and self.conditioned:
            yp, xp = self.y_prev, self.x_prev
        return ObservationSet(self.y[:, start:stop], self.x[:, start:stop],
                              self.site_order, self.time_index[start:stop], yp, xp)


@dataclass(frozen=True)
class ModelParams:
    beta: np.ndarray
    spatial: SpatialCovParams
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if np.any(np.abs(phi) >= 1):
            raise DataError("all |phi_s| must be < 1")
        object.__setattr__(self, "phi", phi)


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def logpdf(self, v):
        return -np.log(self.hi - self.lo) if self.lo < v < self.hi else -np.inf

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def var(self):
        return (self.hi - self.lo) ** 2 / 12.0


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def logpdf(self, v):
        z = (v - self.mean) / self.sd
        return -0.5 * z * z - np.log(self.sd) - 0.5 * LOG_2PI

    @property
    def var(self):
        return self.sd ** 2


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def logpdf(self, v):
        if v <= 0:
            return -np.inf
        from scipy.special import gammaln
        a, b = self.shape, self.rate
        return a * np.log(b) - gammaln(a) + (a - 1) * np.log(v) - b * v

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate ** 2

    @classmethod
    def from_moments(cls, mean: float, var: float) -> "Gamma":
        return cls(mean * mean / var, mean / var)


@dataclass(frozen=True)
class PriorSpec:
    """Priors for all model parameters.

    ``cov`` maps covariance parameter names (``sigma2_d``, ``alpha_d``, ...,
    ``sigma2_0``) to :class:`Uniform` or :class:`Gamma` priors; the sills
    present in it decide which covariance components are fitted.  ``phi``
    is uniform on (-1, 1) unless ``phi_atanh`` gives per-site normal priors
    on ``atanh(phi_s)``.
    """

    beta_mean: np.ndarray
    beta_sd: np.ndarray
    cov: Dict[str, object]
    phi_atanh: Optional[tuple] = None

    @property
    def components(self) -> tuple:
        return tuple(c for c, (sill, _) in COMPONENTS.items() if sill in self.cov)

    @property
    def cov_names(self) -> list:
        names = []
        for c in self.components:
            names.extend(COMPONENTS[c])
        return names + ["sigma2_0"]

    def validate(self, p: int, S: int) -> "PriorSpec":
        if len(self.beta_mean) != p or len(self.beta_sd) != p:
            raise InvalidConfig(f"beta prior must have length p={p}")
        if np.any(np.asarray(self.beta_sd) <= 0):
            raise InvalidConfig("beta prior sd must be positive")
        if not self.components:
            raise InvalidConfig("at least one covariance component is required")
        for name in self.cov_names:
            pr = self.cov.get(name)
            if pr is None:
                raise InvalidConfig(f"missing prior for {name}")
            if isinstance(pr, Uniform):
                if not (np.isfinite(pr.hi) and pr.hi > max(pr.lo, 0)):
                    raise InvalidConfig(f"bad uniform bounds for {name}: {pr}")
            elif isinstance(pr, Gamma):
                if not (pr.shape > 0 and pr.rate > 0 and np.isfinite(pr.var)):
                    raise InvalidConfig(f"bad gamma prior for {name}: {pr}")
            else:
                raise InvalidConfig(f"unsupported prior family for {name}: {pr!r}")
        if self.phi_atanh is not None:
            m, s = (np.asarray(a, dtype=float) for a in self.phi_atanh)
            if m.shape != (S,) or s.shape != (S,) or np.any(s <= 0):
                raise InvalidConfig("phi_atanh must hold S means and S positive sds")
        return self


def default_priors(obs: ObservationSet, net: StreamNetwork,
                   components: Sequence[str] = ("taildown",),
                   beta_sd: float = 10.0) -> PriorSpec:
    """Flat-ish defaults.

    ``beta ~ N(0, 10^2)``, sills ``~ U(0, 2 var(y))``, ranges
    ``~ U(0, 4 max distance)``, nugget ``~ U(0, var(y))``.
    """
    for c in components:
        if c not in COMPONENTS:
            raise InvalidConfig(f"unknown covariance component {c!r}")
    vy = float(np.nanvar(obs.y))
    if not vy > 0:
        vy = 1.0
    dmax = net.max_distance if net.n_sites > 1 else 1.0
    dmax = dmax if dmax > 0 else 1.0
    cov = {}
    for c in components:
        sill, rng = COMPONENTS[c]
        cov[sill] = Uniform(0.0, 2.0 * vy)
        cov[rng] = Uniform(0.0, 4.0 * dmax)
    cov["sigma2_0"] = Uniform(0.0, vy)
    return PriorSpec(np.zeros(obs.p), np.full(obs.p, beta_sd), cov)


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings.  ``iters`` counts warm-up iterations, as in Stan."""

    chains: int = 2
    iters: int = 2000
    warmup: int = 1000
    thin: int = 1
    seed: int = 0
    proposal_scales: Optional[Dict[str, float]] = None
    mh_steps: int = 2
    divergence_window: int = 2000

    def validate(self) -> "McmcConfig":
        if self.chains < 1:
            raise InvalidConfig("chains must be >= 1")
        if self.thin < 1:
            raise InvalidConfig("thin must be >= 1")
        if not (0 <= self.warmup < self.iters):
            raise InvalidConfig("need 0 <= warmup < iters")
        if self.mh_steps < 1:
            raise InvalidConfig("mh_steps must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "McmcConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown McmcConfig keys: {sorted(extra)}")
        return cls(**d).validate()

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Post-warm-up (thinned) draws from all chains, stacked."""

    draws: np.ndarray
    param_names: tuple
    chain_ids: np.ndarray
    acceptance_rates: dict
    imputed_y_draws: np.ndarray
    missing_index: tuple
    components: tuple
    p: int
    S: int

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]

    @property
    def beta(self) -> np.ndarray:
        return self.draws[:, : self.p]

    @property
    def phi(self) -> np.ndarray:
        return self.draws[:, -self.S:]

    def cov_columns(self) -> dict:
        return {n: self.column(n) for n in self.param_names[self.p: -self.S]}

    def params(self, m: int) -> ModelParams:
        return _unpack(self.draws[m], self.param_names, self.p, self.S)

    def posterior_mean(self) -> ModelParams:
        return _unpack(self.draws.mean(axis=0), self.param_names, self.p, self.S)

    def interval(self, name: str, level: float = 0.95) -> tuple:
        col = self.column(name)
        a = (1 - level) / 2
        return tuple(np.quantile(col, [a, 1 - a]))


def _unpack(vec, names, p, S) -> ModelParams:
    cov = {n: float(v) for n, v in zip(names[p:-S], vec[p:-S])}
    return ModelParams(vec[:p].copy(), SpatialCovParams(**cov), vec[-S:].copy())


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    """Per-cell posterior predictive summaries, all arrays (S, T).

    ``pit`` is the predictive CDF evaluated at the observation (the
    probability integral transform); ``NaN`` where ``y`` is missing.
    """

    y: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    residual: np.ndarray
    pit: np.ndarray
    level: float

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.y)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


def _var_residuals(y: np.ndarray, x: np.ndarray, beta: np.ndarray, phi: np.ndarray,
                   y0=None, x0=None) -> np.ndarray:
    """Innovations ``r_t = w_t - Phi w_{t-1}`` with ``w = y - X beta``.

    ``r_1 = w_1`` unless the previous response ``y0`` (with covariates
    ``x0``) is supplied.
    """
    w = y - x @ beta
    r = w.copy()
    r[:, 1:] -= phi[:, None] * w[:, :-1]
    if y0 is not None:
        r[:, 0] -= phi * (y0 - x0 @ beta)
    return r


def _gauss_loglik(r: np.ndarray, L: np.ndarray) -> float:
    S, T = r.shape
    z = solve_triangular(L, r, lower=True, check_finite=False)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    return float(-0.5 * (T * logdet + np.sum(z * z) + S * T * LOG_2PI))


def log_likelihood(obs: ObservationSet, net: StreamNetwork, theta: ModelParams) -> float:
    """Sequential VAR(1) Gaussian log-likelihood of a complete data set.

    Raises
    ------
    DataError
        If ``obs`` still has missing cells.
    NotPositiveDefinite
    """
    from .covariance import total_covariance

    if obs.missing.any():
        raise DataError("log_likelihood requires complete data; impute first")
    if theta.phi.shape != (obs.S,) or theta.beta.shape != (obs.p,):
        raise DataError("parameter dimensions do not match the data")
    _, L = total_covariance(net, theta.spatial, return_cholesky=True)
    r = _var_residuals(obs.y, obs.x, theta.beta, theta.phi, obs.y_prev, obs.x_prev)
    return _gauss_loglik(r, L)


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------


def _truncnorm(mean: float, sd: float, lo: float, hi: float, rng) -> float:
    a, b = (lo - mean) / sd, (hi - mean) / sd
    flip = a > 0
    if flip:
        a, b = -b, -a
    pa, pb = ndtr(a), ndtr(b)
    if pb - pa < 1e-300:
        # interval far in the lower tail; b is the end nearest the mode
        z = b
    else:
        z = float(ndtri(pa + rng.random() * (pb - pa)))
        z = min(max(z, a), b)
    if flip:
        z = -z
    return mean + sd * z


class _CovBuilder:
    """Assemble ``Sigma + sigma2_0 I`` from a parameter vector quickly."""

    def __init__(self, net: StreamNetwork, names: Sequence[str]):
        self.names = list(names)
        td_h = np.where(net.connected, net.D_stream, net.D_a + net.D_b)
        self.kernels = []
        for comp, (sill, rng) in COMPONENTS.items():
            if sill in self.names:
                if comp == "tailup":
                    base = np.where(net.connected, net.W, 0.0)
                    h = net.D_stream
                elif comp == "taildown":
                    base, h = None, td_h
                else:
                    base, h = None, net.D_euclid
                self.kernels.append((self.names.index(sill), self.names.index(rng), h, base))
        self.i_nug = self.names.index("sigma2_0")
        self.S = net.n_sites

    def __call__(self, v: np.ndarray) -> np.ndarray:
        C = np.zeros((self.S, self.S))
        for i_s, i_r, h, base in self.kernels:
            K = v[i_s] * np.exp(-3.0 * h / v[i_r])
            C += K if base is None else K * base
        C[np.diag_indices(self.S)] += v[self.i_nug]
        return C


def _chol(C: np.ndarray):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return None


class _Chain:
    def __init__(self, obs, net, priors: PriorSpec, cfg: McmcConfig, rng):
        self.obs, self.net, self.priors, self.cfg, self.rng = obs, net, priors, cfg, rng
        self.S, self.T, self.p = obs.S, obs.T, obs.p
        self.X = obs.x
        self.miss = obs.missing
        self.y0, self.x0 = obs.y_prev, obs.x_prev
        self.cov_names = priors.cov_names
        self.cov_priors = [priors.cov[n] for n in self.cov_names]
        self.build = _CovBuilder(net, self.cov_names)
        self.beta_prec = 1.0 / np.asarray(priors.beta_sd, dtype=float) ** 2
        self.beta_pm = np.asarray(priors.beta_mean, dtype=float) * self.beta_prec
        if priors.phi_atanh is not None:
            self.phi_prior = tuple(np.asarray(a, dtype=float) for a in priors.phi_atanh)
        else:
            self.phi_prior = None
        # per (parity, site) index arrays of missing times
        self.miss_times = []
        for parity in (0, 1):
            for s in range(self.S):
                ts = np.flatnonzero(self.miss[s])
                ts = ts[ts % 2 == parity]
                if ts.size:
                    self.miss_times.append((s, ts))
        self._init_state()

    # -- initialization ----------------------------------------------------
    def _init_state(self):
        S, T, p = self.S, self.T, self.p
        y = np.array(self.obs.y)
        site_mean = np.nanmean(np.where(self.miss, np.nan, y), axis=1)
        site_mean = np.where(np.isfinite(site_mean), site_mean, np.nanmean(y))
        y[self.miss] = np.broadcast_to(site_mean[:, None], y.shape)[self.miss]
        Xf = self.X.reshape(S * T, p)
        obs_rows = ~self.miss.ravel()
        beta, *_ = np.linalg.lstsq(Xf[obs_rows], y.ravel()[obs_rows], rcond=None)
        w = y - self.X @ beta
        num = (w[:, 1:] * w[:, :-1]).sum(axis=1)
        den = (w[:, :-1] ** 2).sum(axis=1) + 1e-12
        phi = np.clip(num / den, -0.9, 0.9)
        r = w.copy()
        r[:, 1:] -= phi[:, None] * w[:, :-1]
        vr = float(np.var(r)) or 1.0

        vals = []
        n_comp = len(self.priors.components)
        dmax = self.net.max_distance or 1.0
        for name, pr in zip(self.cov_names, self.cov_priors):
            if name == "sigma2_0":
                guess = 0.2 * vr
            elif name.startswith("sigma2"):
                guess = 0.8 * vr / n_comp
            else:
                guess = 0.5 * dmax
            if isinstance(pr, Uniform):
                guess = min(max(guess, pr.lo + 0.05 * (pr.hi - pr.lo)), pr.lo + 0.95 * (pr.hi - pr.lo))
            elif isinstance(pr, Gamma):
                guess = pr.mean
            vals.append(guess)
        eta = np.log(np.maximum(vals, 1e-8))
        eta = eta + self.rng.normal(0.0, 0.1, size=eta.size)
        # pull jittered values back into uniform supports
        for k, pr in enumerate(self.cov_priors):
            if isinstance(pr, Uniform) and not np.isfinite(pr.logpdf(np.exp(eta[k]))):
                eta[k] = np.log(vals[k])
        self.y, self.beta, self.phi, self.eta = y, beta, phi, eta
        self.C = self.build(np.exp(eta))
        self.L = _chol(self.C)
        if self.L is None:
            self.C = self.C + 1e-6 * np.eye(S)
            self.L = _chol(self.C)
        self.log_prior_cov = self._cov_log_prior(eta)

        d = eta.size
        scales = np.full(d, 0.1)
        if self.cfg.proposal_scales:
            for k, n in enumerate(self.cov_names):
                if n in self.cfg.proposal_scales:
                    scales[k] = float(self.cfg.proposal_scales[n])
        self.prop_chol = np.diag(scales)
        self.log_scale = 0.0
        self.ada_mean = eta.copy()
        self.ada_cov = np.diag(scales ** 2)
        self.ada_n = 1

    def _cov_log_prior(self, eta) -> float:
        v = np.exp(eta)
        lp = 0.0
        for pr, x in zip(self.cov_priors, v):
            lp += pr.logpdf(x)
            if not np.isfinite(lp):
                return -np.inf
        return lp + eta.sum()

    # -- Gibbs / MH updates --------------------------------------------------
    def update_beta(self):
        S, T, p = self.S, self.T, self.p
        phi = self.phi[:, None]
        Z = self.X.copy()
        Z[:, 1:, :] -= phi[:, :, None] * self.X[:, :-1, :]
        u = self.y.copy()
        u[:, 1:] -= phi * self.y[:, :-1]
        if self.y0 is not None:
            Z[:, 0, :] -= phi * self.x0
            u[:, 0] -= phi[:, 0] * self.y0
        Zt = solve_triangular(self.L, Z.reshape(S, T * p), lower=True, check_finite=False).reshape(S, T, p)
        ut = solve_triangular(self.L, u, lower=True, check_finite=False)
        prec = np.einsum("stp,stq->pq", Zt, Zt) + np.diag(self.beta_prec)
        b = np.einsum("stp,st->p", Zt, ut) + self.beta_pm
        R = np.linalg.cholesky(prec)
        mean = cho_solve((R, True), b)
        self.beta = mean + solve_triangular(R.T, self.rng.standard_normal(p), lower=False)

    def update_phi(self):
        w = self.y - self.X @ self.beta
        Cinv = cho_solve((self.L, True), np.eye(self.S))
        W0, W1 = w[:, :-1], w[:, 1:]
        if self.y0 is not None:
            W0 = np.hstack([(self.y0 - self.x0 @ self.beta)[:, None], W0])
            W1 = w
        Q = Cinv * (W0 @ W0.T)
        h = (W0 * (Cinv @ W1)).sum(axis=1)
        phi = self.phi
        accepted = 0
        for s in range(self.S):
            q = Q[s, s]
            if q <= 1e-300:
                continue
            m = (h[s] - Q[s] @ phi + q * phi[s]) / q
            new = _truncnorm(m, 1.0 / np.sqrt(q), -1.0, 1.0, self.rng)
            new = float(np.clip(new, -1 + 1e-9, 1 - 1e-9))
            if self.phi_prior is not None:
                mu, sd = self.phi_prior[0][s], self.phi_prior[1][s]
                lp_new = -0.5 * ((np.arctanh(new) - mu) / sd) ** 2 - np.log1p(-new * new)
                lp_old = -0.5 * ((np.arctanh(phi[s]) - mu) / sd) ** 2 - np.log1p(-phi[s] ** 2)
                if np.log(self.rng.random()) >= lp_new - lp_old:
                    continue
            phi[s] = new
            accepted += 1
        self.phi = phi
        return accepted / self.S

    def update_missing(self):
        if not self.miss_times:
            return
        T = self.T
        Cinv = cho_solve((self.L, True), np.eye(self.S))
        phi = self.phi
        xb = self.X @ self.beta
        w = self.y - xb
        w0 = None if self.y0 is None else self.y0 - self.x0 @ self.beta
        for s, ts in self.miss_times:
            interior = ts < T - 1
            has_prev = ts > 0
            c_ss = Cinv[s, s]
            prec = c_ss * (1.0 + interior * phi[s] ** 2)
            wt = w[:, ts]
            Pw = Cinv[s] @ wt
            Pw = Pw + interior * phi[s] * ((Cinv[s] * phi) @ wt)
            b = np.zeros(ts.size)
            prev = ts[has_prev] - 1
            b[has_prev] = (Cinv[s] * phi) @ w[:, prev]
            if w0 is not None and not has_prev[0]:
                b[0] = (Cinv[s] * phi) @ w0
            nxt = ts[interior] + 1
            b[interior] += phi[s] * (Cinv[s] @ w[:, nxt])
            mean = wt[s] + (b - Pw) / prec
            w[s, ts] = mean + self.rng.standard_normal(ts.size) / np.sqrt(prec)
        self.y = w + xb
        self.y[~self.miss] = self.obs.y[~self.miss]

    def update_cov(self, adapt: bool, it: int):
        r = _var_residuals(self.y, self.X, self.beta, self.phi, self.y0, self.x0)
        cur_ll = _gauss_loglik(r, self.L)
        cur_lp = self.log_prior_cov
        acc = 0
        for _ in range(self.cfg.mh_steps):
            prop = self.eta + np.exp(self.log_scale) * (self.prop_chol @ self.rng.standard_normal(self.eta.size))
            lp = self._cov_log_prior(prop)
            ok = False
            if np.isfinite(lp):
                C = self.build(np.exp(prop))
                L = _chol(C)
                if L is not None:
                    ll = _gauss_loglik(r, L)
                    if np.log(self.rng.random()) < ll + lp - cur_ll - cur_lp:
                        self.eta, self.C, self.L = prop, C, L
                        cur_ll, cur_lp = ll, lp
                        ok = True
            acc += ok
            if adapt:
                a = float(ok)
                gamma = 1.0 / (1.0 + it) ** 0.6
                self.log_scale += gamma * (a - 0.3)
        self.log_prior_cov = cur_lp
        if adapt:
            self._adapt_proposal(it)
        return acc / self.cfg.mh_steps

    def _adapt_proposal(self, it):
        self.ada_n += 1
        n = self.ada_n
        delta = self.eta - self.ada_mean
        self.ada_mean = self.ada_mean + delta / n
        self.ada_cov = self.ada_cov + (np.outer(delta, self.eta - self.ada_mean) - self.ada_cov) / n
        d = self.eta.size
        if it >= 100 and it % 25 == 0:
            cov = (2.38 ** 2 / d) * self.ada_cov + 1e-8 * np.eye(d)
            L = _chol(cov)
            if L is not None:
                self.prop_chol = L

    def run(self):
        cfg = self.cfg
        keep = []
        imputed = []
        acc_cov, acc_phi = [], []
        rejected_run = 0
        for it in range(cfg.iters):
            warm = it < cfg.warmup
            self.update_beta()
            acc_phi.append(self.update_phi())
            self.update_missing()
            a = self.update_cov(adapt=warm, it=it)
            acc_cov.append(a)
            if not warm:
                rejected_run = rejected_run + 1 if a == 0 else 0
                if rejected_run * cfg.mh_steps >= cfg.divergence_window:
                    raise DivergentChain(
                        f"no covariance proposal accepted in {cfg.divergence_window} post-warm-up tries")
                if (it - cfg.warmup) % cfg.thin == 0:
                    keep.append(np.concatenate([self.beta, np.exp(self.eta), self.phi]))
                    imputed.append(self.y[self.miss].copy())
        post = slice(cfg.warmup, None)
        rates = {"beta": 1.0, "phi": float(np.mean(acc_phi[post])), "cov": float(np.mean(acc_cov[post]))}
        return np.array(keep), np.array(imputed).reshape(len(keep), -1), rates


def sample_posterior(obs: ObservationSet, net: StreamNetwork, priors: Optional[PriorSpec] = None,
                     cfg: Optional[McmcConfig] = None) -> PosteriorSamples:
    """Draw from the joint posterior of parameters and missing responses.

    Chains are seeded from ``cfg.seed`` through :class:`numpy.random.SeedSequence`,
    so results are reproducible for a fixed configuration.

    Raises
    ------
    InvalidConfig
        Bad sampler settings or priors.
    DivergentChain
        The covariance block rejected every proposal for ``cfg.divergence_window``
        consecutive post-warm-up proposals.
    """
    cfg = (cfg or McmcConfig()).validate()
    if net.n_sites != obs.S:
        raise DataError(f"network has {net.n_sites} sites but data has {obs.S} rows")
    if tuple(net.site_ids) != tuple(obs.site_order):
        net = net.subset(obs.site_order)
    priors = (priors or default_priors(obs, net)).validate(obs.p, obs.S)
    if np.all(obs.missing):
        raise DataError("all responses are missing")

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    all_draws, all_imp, chain_ids, rates = [], [], [], []
    for c, ss in enumerate(seeds):
        chain = _Chain(obs, net, priors, cfg, np.random.default_rng(ss))
        d, imp, r = chain.run()
        all_draws.append(d)
        all_imp.append(imp)
        chain_ids.append(np.full(len(d), c))
        rates.append(r)
    names = tuple([f"beta_{k}" for k in range(obs.p)] + priors.cov_names
                  + [f"phi_{k + 1}" for k in range(obs.S)])
    acc = {k: float(np.mean([r[k] for r in rates])) for k in rates[0]}
    draws = np.vstack(all_draws)
    draws.setflags(write=False)
    return PosteriorSamples(
        draws=draws,
        param_names=names,
        chain_ids=np.concatenate(chain_ids),
        acceptance_rates=acc,
        imputed_y_draws=np.vstack(all_imp),
        missing_index=tuple(np.nonzero(obs.missing)),
        components=priors.components,
        p=obs.p,
        S=obs.S,
    )


# ---------------------------------------------------------------------------
# posterior predictive
# ---------------------------------------------------------------------------


def _sqrt_psd(C: np.ndarray) -> np.ndarray:
    L = _chol(C)
    if L is not None:
        return L
    vals, vecs = np.linalg.eigh(C)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def posterior_predictive(samples: PosteriorSamples, obs: ObservationSet, net: StreamNetwork,
                         level: float = 0.95, seed: int = 0) -> PredictiveSummary:
    """One-step-ahead posterior predictive summaries for every cell.

    For each draw the previous response ``y_{t-1}`` is the observed value,
    or that draw's imputed value where it was missing.
    """
    if not 0 < level < 1:
        raise DataError("level must lie in (0, 1)")
    if samples.n_draws < 1:
        raise DataError("no posterior draws")
    if tuple(net.site_ids) != tuple(obs.site_order):
        net = net.subset(obs.site_order)
    rng = np.random.default_rng(seed)
    S, T = obs.S, obs.T
    names = samples.param_names
    cov_names = list(names[samples.p: -samples.S])
    build = _CovBuilder(net, cov_names)
    miss = obs.missing
    M = samples.n_draws
    preds = np.empty((M, S, T))
    y_base = np.array(obs.y)
    for m in range(M):
        vec = samples.draws[m]
        beta, covv, phi = vec[: samples.p], vec[samples.p: -samples.S], vec[-samples.S:]
        y = y_base.copy()
        if miss.any():
            y[miss] = samples.imputed_y_draws[m]
        xb = obs.x @ beta
        mu = xb.copy()
        mu[:, 1:] += phi[:, None] * (y[:, :-1] - xb[:, :-1])
        if obs.conditioned:
            mu[:, 0] += phi * (obs.y_prev - obs.x_prev @ beta)
        L = _sqrt_psd(build(covv))
        preds[m] = mu + L @ rng.standard_normal((S, T))
    a = (1 - level) / 2
    lower, upper = np.quantile(preds, [a, 1 - a], axis=0)
    mean = preds.mean(axis=0)
    sd = preds.std(axis=0)
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    pit = np.where(miss, np.nan, (preds <= np.where(miss, 0.0, obs.y)[None]).mean(axis=0))
    resid = obs.y - mean
    return PredictiveSummary(y=obs.y, mean=mean, sd=sd, lower=lower, upper=upper,
                             residual=resid, pit=pit, level=level)


def simulate_from_model(net: StreamNetwork, theta: ModelParams, x: np.ndarray,
                        seed: int = 0) -> np.ndarray:
    """Draw an S x T response matrix from the VAR(1) model itself."""
    from .covariance import total_covariance

    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    S, T = x.shape[:2]
    _, L = total_covariance(net, theta.spatial, return_cholesky=True)
    xb = x @ theta.beta
    w = np.zeros((S, T))
    for t in range(T):
        eps = L @ rng.standard_normal(S)
        w[:, t] = eps if t == 0 else theta.phi * w[:, t - 1] + eps
    return xb + w
