"""Simulation study: every detector on replicated synthetic data sets.

Each replicate simulates a data set, fits the spatio-temporal model, runs
the requested detectors and scores them against the truth, overall and per
anomaly type.  Replicates are independent and run in a process pool whose
size comes from the ``SSNANOMALY_WORKERS`` environment variable (default 1).
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .detectors import detect_arima, detect_hmm, detect_mixture, detect_ppd, make_refit
from .errors import InvalidConfig, SSNAnomalyError
from .evaluate import confusion
from .model import McmcConfig, posterior_predictive, sample_posterior
from .simulate import SimConfig, simulate_dataset

__all__ = ["METHODS", "run_replicate", "run_benchmark", "summarize", "workers_from_env"]

log = logging.getLogger(__name__)

METHODS = ("arima", "ppd_iter1", "ppd_iter2", "mixture_iter1", "mixture_iter2", "hmm")
MEASURES = ("se", "sp", "acc", "acc_adj", "mcc")
WORKERS_ENV = "SSNANOMALY_WORKERS"


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _resolve(methods) -> tuple:
    if methods is None or methods == "all" or list(methods) == ["all"]:
        return METHODS
    bad = set(methods) - set(METHODS)
    if bad:
        raise InvalidConfig(f"unknown methods {sorted(bad)}; choose from {METHODS}")
    return tuple(m for m in METHODS if m in methods)


def run_replicate(sim: SimConfig, mcmc: McmcConfig, methods: Sequence[str] = METHODS,
                  level: float = 0.95) -> list:
    """One replicate; returns a list of metric rows (dicts).

    Rows carry ``replicate`` (the simulation seed), ``method``,
    ``anomaly_type`` (``"all"`` or a type name) and the confusion measures.
    A method that raises is logged and yields no rows.
    """
    methods = _resolve(methods)
    ds = simulate_dataset(sim)
    obs, net = ds.obs, ds.network
    labels = {}
    need_model = any(m != "arima" for m in methods)
    if need_model:
        post = sample_posterior(obs, net, cfg=mcmc)
        summary = posterior_predictive(post, obs, net, level=level, seed=mcmc.seed)
    for m in methods:
        try:
            if m == "arima":
                labels[m] = detect_arima(obs, level=level)
            elif m == "ppd_iter1":
                labels[m] = detect_ppd(summary)
            elif m == "ppd_iter2":
                refit = make_refit(obs, net, cfg=mcmc, level=level, seed=mcmc.seed)
                labels[m] = detect_ppd(summary, iterations=2, refit=refit)
            elif m == "mixture_iter1":
                labels[m] = detect_mixture(summary, iterations=1, seed=sim.seed)[1]
            elif m == "mixture_iter2":
                labels[m] = detect_mixture(summary, iterations=2, seed=sim.seed)[1]
            elif m == "hmm":
                labels[m] = detect_hmm(summary, seed=sim.seed)[1]
        except SSNAnomalyError as exc:
            log.warning("replicate %d: %s failed: %s", sim.seed, m, exc)
    rows = []
    for m, lab in labels.items():
        for kind in ("all", *sim.anomaly_types):
            cm = confusion(lab, ds.truth, by_type=None if kind == "all" else kind)
            row = {"replicate": sim.seed, "method": m, "anomaly_type": kind,
                   "flag_rate": lab.flag_rate}
            row.update({k: getattr(cm, k) for k in ("TP", "TN", "FP", "FN", *MEASURES)})
            rows.append(row)
    return rows


def _job(args):
    sim, mcmc, methods, level = args
    return run_replicate(sim, mcmc, methods, level)


def run_benchmark(replicates: int = 20, sim: Optional[SimConfig] = None,
                  mcmc: Optional[McmcConfig] = None, methods=None, level: float = 0.95,
                  seed: int = 0, workers: Optional[int] = None) -> list:
    """Run ``replicates`` replicates with simulation seeds ``seed .. seed + replicates - 1``.

    MCMC seeds follow the simulation seeds, so results do not depend on the
    number of workers.  Returns all per-replicate rows in replicate order.
    """
    if replicates < 1:
        raise InvalidConfig("replicates must be >= 1")
    sim = sim or SimConfig()
    mcmc = mcmc or McmcConfig()
    methods = _resolve(methods)
    jobs = [(replace(sim, seed=seed + r), replace(mcmc, seed=seed + r), methods, level)
            for r in range(replicates)]
    workers = workers_from_env() if workers is None else max(1, int(workers))
    if workers == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    return [row for rows in results for row in rows]


def summarize(rows: Sequence[dict]) -> list:
    """Aggregate per-replicate rows into one row per (method, anomaly type).

    Means of every measure (the published tables report means) plus the
    median MCC and median sensitivity.  Undefined values (``nan``) are
    skipped.
    """
    keys = []
    for r in rows:
        k = (r["method"], r["anomaly_type"])
        if k not in keys:
            keys.append(k)
    order = {m: i for i, m in enumerate(METHODS)}
    keys.sort(key=lambda k: (k[1] != "all", k[1], order.get(k[0], 99)))
    out = []
    for method, kind in keys:
        sel = [r for r in rows if r["method"] == method and r["anomaly_type"] == kind]
        row = {"method": method, "anomaly_type": kind, "replicates": len(sel)}
        for m in MEASURES:
            vals = np.array([r[m] for r in sel], dtype=float)
            vals = vals[~np.isnan(vals)]
            row[m] = float(vals.mean()) if vals.size else float("nan")
        for m in ("mcc", "se"):
            vals = np.array([r[m] for r in sel], dtype=float)
            vals = vals[~np.isnan(vals)]
            row[f"{m}_median"] = float(np.median(vals)) if vals.size else float("nan")
        out.append(row)
    return out
