"""Batch-recursive fitting with posterior-to-prior carryover.

Each batch is fitted with priors moment-matched from the posterior of the
last batch judged clean.  A batch whose PPD flag fraction exceeds
``skip_threshold`` is treated as anomalous and does not update the prior.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .detectors import FLAG_MISSING, AnomalyLabels, detect_ppd
from .errors import DataError, InvalidConfig, SSNAnomalyError
from .model import (
    Gamma,
    McmcConfig,
    Normal,
    ObservationSet,
    PosteriorSamples,
    PriorSpec,
    Uniform,
    default_priors,
    posterior_predictive,
    sample_posterior,
)

__all__ = ["BatchState", "fit_recursive", "moment_match", "prior_to_dict", "prior_from_dict"]

log = logging.getLogger(__name__)

CARRY_GROUPS = ("beta", "phi", "cov")


@dataclass(frozen=True)
class BatchState:
    """Outcome of one batch.

    Attributes
    ----------
    index : int
    prior_next : PriorSpec
        Prior carried into the next batch.  For a skipped batch it is the
        prior the batch itself was fitted with.
    anomaly_fraction : float
        Fraction of observed cells flagged by the PPD detector (``nan`` if
        the fit failed).
    skipped : bool
    beta_mean : ndarray or None
        Posterior mean of ``beta`` for this batch (``None`` on failure).
    error : str, optional
        Message of the fit error that caused a skip.
    """

    index: int
    prior_next: PriorSpec
    anomaly_fraction: float
    skipped: bool
    beta_mean: Optional[np.ndarray] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "anomaly_fraction": self.anomaly_fraction,
            "skipped": self.skipped,
            "beta_mean": None if self.beta_mean is None else list(map(float, self.beta_mean)),
            "error": self.error,
            "prior_next": prior_to_dict(self.prior_next),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchState":
        bm = d.get("beta_mean")
        return cls(int(d["index"]), prior_from_dict(d["prior_next"]), float(d["anomaly_fraction"]),
                   bool(d["skipped"]), None if bm is None else np.asarray(bm, dtype=float),
                   d.get("error"))


# ---------------------------------------------------------------------------
# prior (de)serialization
# ---------------------------------------------------------------------------


def _dist_to_dict(pr) -> dict:
    if isinstance(pr, Uniform):
        return {"family": "uniform", "lo": pr.lo, "hi": pr.hi}
    if isinstance(pr, Gamma):
        return {"family": "gamma", "shape": pr.shape, "rate": pr.rate}
    if isinstance(pr, Normal):
        return {"family": "normal", "mean": pr.mean, "sd": pr.sd}
    raise InvalidConfig(f"cannot serialize prior {pr!r}")


def _dist_from_dict(d: dict):
    fam = d.get("family")
    if fam == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if fam == "gamma":
        return Gamma(float(d["shape"]), float(d["rate"]))
    if fam == "normal":
        return Normal(float(d["mean"]), float(d["sd"]))
    raise InvalidConfig(f"unknown prior family {fam!r}")


def prior_to_dict(pr: PriorSpec) -> dict:
    out = {
        "beta_mean": [float(v) for v in pr.beta_mean],
        "beta_sd": [float(v) for v in pr.beta_sd],
        "cov": {k: _dist_to_dict(v) for k, v in pr.cov.items()},
        "phi_atanh": None,
    }
    if pr.phi_atanh is not None:
        out["phi_atanh"] = [[float(v) for v in a] for a in pr.phi_atanh]
    return out


def prior_from_dict(d: dict) -> PriorSpec:
    phi = d.get("phi_atanh")
    return PriorSpec(np.asarray(d["beta_mean"], dtype=float), np.asarray(d["beta_sd"], dtype=float),
                     {k: _dist_from_dict(v) for k, v in d["cov"].items()},
                     None if phi is None else tuple(np.asarray(a, dtype=float) for a in phi))


# ---------------------------------------------------------------------------
# moment matching
# ---------------------------------------------------------------------------


def moment_match(post: PosteriorSamples, base: PriorSpec,
                 carry: Sequence[str] = CARRY_GROUPS) -> PriorSpec:
    """Turn posterior draws into the next batch's prior.

    ``beta`` and ``atanh(phi)`` get normal priors, covariance parameters
    gamma priors, each with the posterior mean and variance.  Groups not
    listed in ``carry`` keep the prior from ``base``.
    """
    bad = set(carry) - set(CARRY_GROUPS)
    if bad:
        raise InvalidConfig(f"unknown carry groups {sorted(bad)}")
    beta_mean, beta_sd = np.asarray(base.beta_mean, float), np.asarray(base.beta_sd, float)
    if "beta" in carry:
        b = post.beta
        beta_mean = b.mean(axis=0)
        beta_sd = np.maximum(b.std(axis=0), 1e-6 * np.maximum(np.abs(beta_mean), 1.0))
    phi = base.phi_atanh
    if "phi" in carry:
        z = np.arctanh(np.clip(post.phi, -1 + 1e-9, 1 - 1e-9))
        phi = (z.mean(axis=0), np.maximum(z.std(axis=0), 1e-6))
    cov = dict(base.cov)
    if "cov" in carry:
        for name, col in post.cov_columns().items():
            m = float(col.mean())
            v = max(float(col.var()), (1e-6 * m) ** 2, 1e-300)
            cov[name] = Gamma.from_moments(m, v)
    return PriorSpec(beta_mean, beta_sd, cov, phi)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _missing_labels(obs: ObservationSet) -> AnomalyLabels:
    S, T = obs.S, obs.T
    return AnomalyLabels(np.full((S, T), FLAG_MISSING, dtype=np.int8), np.full((S, T), np.nan), "ppd")


def fit_recursive(batches: Sequence[ObservationSet], net, init_priors: Optional[PriorSpec] = None,
                  cfg: Optional[McmcConfig] = None, skip_threshold: float = 0.2,
                  level: float = 0.95, carry: Sequence[str] = CARRY_GROUPS,
                  state_dir=None, seed: Optional[int] = None, link: bool = True):
    """Fit batches in order, carrying priors from the last clean batch.

    Parameters
    ----------
    batches : sequence of ObservationSet
        Time-ordered, contiguous batches over the same sites.
    init_priors : PriorSpec, optional
        Prior for the first batch; defaults to :func:`default_priors` on it.
    skip_threshold : float in (0, 1]
        Batches whose flagged fraction exceeds this are skipped.
    carry : subset of ``("beta", "phi", "cov")``
        Parameter groups updated from the posterior; the rest keep the
        initial prior.
    state_dir : path, optional
        Writes ``batch_<i>.json`` with each :class:`BatchState`.
    seed : int, optional
        Overrides ``cfg.seed``; batch ``i`` uses ``seed + i``.
    link : bool
        Condition the first time of each batch on the last column of the
        previous batch (missing cells there take their posterior mean
        imputation), so the batches together use the same likelihood as
        one fit of the whole series.  Batches that already carry
        ``y_prev`` are left alone.

    Returns
    -------
    (list of BatchState, AnomalyLabels)
        Labels are concatenated along time.  Cells of a failed batch are
        marked missing.
    """
    if not batches:
        raise DataError("no batches given")
    if not 0 < skip_threshold <= 1:
        raise InvalidConfig("skip_threshold must lie in (0, 1]")
    cfg = (cfg or McmcConfig()).validate()
    base_seed = cfg.seed if seed is None else int(seed)
    S = batches[0].S
    for k, b in enumerate(batches):
        if b.S != S or tuple(b.site_order) != tuple(batches[0].site_order):
            raise DataError(f"batch {k} has different sites")
        if k and b.time_index[0] <= batches[k - 1].time_index[-1]:
            raise DataError(f"batch {k} is not after batch {k - 1}")
    out_dir = None
    if state_dir is not None:
        out_dir = Path(state_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    prior = init_priors or default_priors(batches[0], net)
    base = prior
    states, labels = [], []
    last = None
    for i, batch in enumerate(batches):
        if link and last is not None and not batch.conditioned:
            batch = replace(batch, y_prev=last[0], x_prev=last[1])
        last = None
        bcfg = McmcConfig(**{**cfg.to_dict(), "seed": base_seed + i})
        try:
            post = sample_posterior(batch, net, prior, bcfg)
            summary = posterior_predictive(post, batch, net, level=level, seed=base_seed + i)
            lab = detect_ppd(summary)
        except SSNAnomalyError as exc:
            log.warning("batch %d failed: %s", i, exc)
            st = BatchState(i, prior, float("nan"), True, None, str(exc))
            lab = _missing_labels(batch)
        else:
            frac = lab.flag_rate
            skipped = frac > skip_threshold
            nxt = prior if skipped else moment_match(post, base, carry)
            st = BatchState(i, nxt, frac, skipped, post.beta.mean(axis=0))
            prior = nxt
            y_last = np.array(batch.y[:, -1])
            gap = np.isnan(y_last)
            if gap.any():
                filled = np.full(batch.y.shape, np.nan)
                filled[post.missing_index] = post.imputed_y_draws.mean(axis=0)
                y_last[gap] = filled[gap, -1]
            last = (y_last, batch.x[:, -1])
        states.append(st)
        labels.append(lab)
        if out_dir is not None:
            (out_dir / f"batch_{i:03d}.json").write_text(json.dumps(st.to_dict(), indent=2))
    flag = np.concatenate([lab.flag for lab in labels], axis=1)
    score = np.concatenate([lab.score for lab in labels], axis=1)
    return states, AnomalyLabels(flag, score, "ppd", 1, level)
