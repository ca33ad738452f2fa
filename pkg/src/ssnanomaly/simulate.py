"""Synthetic stream-network data with injected, labelled anomalies.

The clean response is built additively::

    y[s, t] = X[s, t] @ beta + v[s] + a[s, t] + e[s, t]

where ``v ~ N(0, Sigma + sigma2_0 I)`` is a spatial field drawn once,
``a`` is a unit-variance stationary AR(1) per site and ``e ~ N(0, 1)``.

Anomaly starts are Bernoulli(``q_ini``) per cell, the type is picked
uniformly from ``anomaly_types`` and persistent types last ``1 + n`` cells
with ``n ~ Poisson(lam)``.  Offsets added to the clean response:

=========  ===========================================
spike      N(5, 1), one cell only
high_var   N(1, 5) per cell
shift      N(5, 1) per cell
drift      N(5, 1) per cell, sorted ascending in time
=========  ===========================================

Cells already claimed by an earlier window keep their first label.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .covariance import SpatialCovParams, total_covariance
from .errors import InvalidConfig
from .model import ObservationSet
from .network import StreamNetwork, generate_random_network

__all__ = ["ANOMALY_TYPES", "AnomalyWindow", "SimConfig", "LabeledDataset", "simulate_dataset"]

ANOMALY_TYPES = ("spike", "high_var", "shift", "drift")
NONE = "none"

_DEFAULT_MAGNITUDES = {
    "spike": (5.0, 1.0),
    "high_var": (1.0, 5.0),
    "shift": (5.0, 1.0),
    "drift": (5.0, 1.0),
}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; defaults reproduce the published design."""

    n_segments: int = 150
    n_sites: int = 30
    T: int = 120
    beta: tuple = (10.0, 1.0, 0.0, -1.0)
    spatial: SpatialCovParams = SpatialCovParams(sigma2_d=3.0, alpha_d=10.0, sigma2_0=0.1)
    phi: float = 0.8
    noise_sd: float = 1.0
    q_ini: float = 0.05
    lam: float = 0.8
    anomaly_types: tuple = ANOMALY_TYPES
    magnitudes: dict = field(default_factory=lambda: dict(_DEFAULT_MAGNITUDES))
    seed: int = 0

    def validate(self) -> "SimConfig":
        if not 0 <= self.q_ini < 1:
            raise InvalidConfig("q_ini must lie in [0, 1)")
        if self.lam < 0:
            raise InvalidConfig("lam must be >= 0")
        if self.T < 2:
            raise InvalidConfig("T must be >= 2")
        if not -1 < self.phi < 1:
            raise InvalidConfig("phi must lie in (-1, 1)")
        if self.n_sites < 1 or self.n_segments < self.n_sites:
            raise InvalidConfig("need 1 <= n_sites <= n_segments")
        if len(self.beta) < 1:
            raise InvalidConfig("beta must have at least an intercept")
        bad = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if bad:
            raise InvalidConfig(f"unknown anomaly types {sorted(bad)}")
        for t in self.anomaly_types:
            if t not in self.magnitudes:
                raise InvalidConfig(f"no magnitude for anomaly type {t!r}")
        try:
            self.spatial.validate()
        except Exception as exc:
            raise InvalidConfig(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["anomaly_types"] = list(self.anomaly_types)
        d["magnitudes"] = {k: list(v) for k, v in self.magnitudes.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown SimConfig keys: {sorted(extra)}")
        if "spatial" in d and isinstance(d["spatial"], dict):
            d["spatial"] = SpatialCovParams(**d["spatial"])
        if "beta" in d:
            d["beta"] = tuple(float(b) for b in d["beta"])
        if "anomaly_types" in d:
            d["anomaly_types"] = tuple(d["anomaly_types"])
        if "magnitudes" in d:
            mags = dict(_DEFAULT_MAGNITUDES)
            mags.update({k: tuple(v) for k, v in d["magnitudes"].items()})
            d["magnitudes"] = mags
        return cls(**d).validate()


@dataclass(frozen=True)
class AnomalyWindow:
    """One injected anomaly: the cells it claimed and their offsets, in time order."""

    site: int
    kind: str
    cells: tuple
    offsets: tuple


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Observed data, the clean response and per-cell truth labels.

    ``truth`` holds an anomaly type name or ``"none"``; ``starts`` marks the
    cells where a Bernoulli anomaly start was drawn (before persistence).
    ``temporal`` is the AR(1) component of the clean response, before the
    white noise is added.  ``windows`` lists every anomaly that claimed at
    least one cell.
    """

    obs: ObservationSet
    y_clean: np.ndarray
    truth: np.ndarray
    starts: np.ndarray
    network: StreamNetwork
    temporal: Optional[np.ndarray] = None
    windows: tuple = ()

    @property
    def anomalous(self) -> np.ndarray:
        return self.truth != NONE


def _ar1(rng, phi: float, S: int, T: int) -> np.ndarray:
    a = np.empty((S, T))
    a[:, 0] = rng.standard_normal(S)
    innov = np.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        a[:, t] = phi * a[:, t - 1] + innov * rng.standard_normal(S)
    return a


def simulate_dataset(cfg: Optional[SimConfig] = None) -> LabeledDataset:
    cfg = (cfg or SimConfig()).validate()
    ss_net, ss_x, ss_field, ss_anom = np.random.SeedSequence(cfg.seed).spawn(4)
    net = generate_random_network(cfg.n_segments, cfg.n_sites,
                                  seed=int(ss_net.generate_state(1)[0]))
    S, T, p = cfg.n_sites, cfg.T, len(cfg.beta)

    rng = np.random.default_rng(ss_x)
    x = np.ones((S, T, p))
    if p > 1:
        x[:, :, 1:] = rng.standard_normal((S, T, p - 1))

    rng = np.random.default_rng(ss_field)
    _, L = total_covariance(net, cfg.spatial, return_cholesky=True)
    v = L @ rng.standard_normal(S)
    a = _ar1(rng, cfg.phi, S, T)
    e = cfg.noise_sd * rng.standard_normal((S, T))
    y = x @ np.asarray(cfg.beta, dtype=float) + v[:, None] + a + e

    rng = np.random.default_rng(ss_anom)
    starts = rng.random((S, T)) < cfg.q_ini
    kinds = rng.integers(len(cfg.anomaly_types), size=(S, T))
    truth = np.full((S, T), NONE, dtype=object)
    y_obs = y.copy()
    windows = []
    # time-major so the earliest window claims overlapping cells
    for t, s in sorted(zip(*np.nonzero(starts.T))):
        kind = cfg.anomaly_types[kinds[s, t]]
        length = 1 if kind == "spike" else 1 + int(rng.poisson(cfg.lam))
        cells = np.arange(t, min(t + length, T))
        mu, sd = cfg.magnitudes[kind]
        offsets = rng.normal(mu, sd, size=cells.size)
        if kind == "drift":
            offsets = np.sort(offsets)
        claimed = []
        for c, off in zip(cells, offsets):
            if truth[s, c] == NONE:
                truth[s, c] = kind
                y_obs[s, c] += off
                claimed.append((int(c), float(off)))
        if claimed:
            c, off = zip(*claimed)
            windows.append(AnomalyWindow(int(s), kind, c, off))

    obs = ObservationSet(y_obs, x, tuple(net.site_ids), np.arange(T))
    truth = truth.astype(str)
    for arr in (y, truth, starts, a):
        arr.setflags(write=False)
    return LabeledDataset(obs=obs, y_clean=y, truth=truth, starts=starts, network=net, temporal=a,
                          windows=tuple(windows))
