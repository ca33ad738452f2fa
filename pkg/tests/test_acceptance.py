"""Acceptance criteria.  Each test prints one ``PASS``/``FAIL`` line.

Criteria 6 and 7 are not met by this implementation.  They run at their
stated tolerances and are marked as strict expected failures, so they
report ``FAIL`` and ``XFAIL`` and would break the run if they started to
pass unnoticed.

The simulation-study criteria share one reduced benchmark (15 sites, 60
times, 20 replicates), which takes several minutes on one core; set
``SSNANOMALY_WORKERS`` to spread replicates over processes.
"""
import time

import numpy as np
import pytest
from helpers import ACCEPTANCE_LINES, event_levels, model_data
from oracles import dense_var1_logpdf, dtw_bruteforce, hmm_enumerate, mcc_pearson

from ssnanomaly import hmm
from ssnanomaly.benchmark import run_benchmark
from ssnanomaly.covariance import SpatialCovParams, total_covariance
from ssnanomaly.evaluate import confusion
from ssnanomaly.impale import detect_events_mhmm, dtw_distance
from ssnanomaly.model import (
    McmcConfig,
    ModelParams,
    ObservationSet,
    log_likelihood,
    sample_posterior,
)
from ssnanomaly.network import generate_random_network
from ssnanomaly.recursive import fit_recursive
from ssnanomaly.simulate import ANOMALY_TYPES, SimConfig, simulate_dataset

pytestmark = pytest.mark.slow

STUDY_SIM = SimConfig(n_sites=15, T=60)
STUDY_MCMC = McmcConfig(chains=2, iters=1500, warmup=750)
MIXTURES = ("mixture_iter1", "mixture_iter2")


def _report(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, detail


def _median(rows, method, measure, kind="all"):
    v = np.array([r[measure] for r in rows if r["method"] == method and r["anomaly_type"] == kind], float)
    return float(np.nanmedian(v))


def _mean(rows, method, measure, kind="all"):
    v = np.array([r[measure] for r in rows if r["method"] == method and r["anomaly_type"] == kind], float)
    return float(np.nanmean(v))


@pytest.fixture(scope="module")
def study():
    return run_benchmark(20, STUDY_SIM, STUDY_MCMC, methods="all", seed=0)


def test_1_likelihood_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for i in range(50):
        S, T, p = int(rng.integers(1, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
        net = generate_random_network(2 * S, S, seed=i)
        x = np.ones((S, T, p))
        x[:, :, 1:] = rng.normal(size=(S, T, p - 1))
        spatial = SpatialCovParams(*rng.uniform(0.1, 3.0, 6), sigma2_0=float(rng.uniform(0.05, 1.0)))
        theta = ModelParams(rng.normal(size=p), spatial, rng.uniform(-0.95, 0.95, S))
        y = rng.normal(size=(S, T)) * 3
        ref = dense_var1_logpdf(y, x, theta.beta, theta.phi, total_covariance(net, spatial))
        got = log_likelihood(ObservationSet(y, x), net, theta)
        worst = max(worst, abs(got - ref))
    elapsed = time.perf_counter() - start
    _report(1, worst < 1e-8 and elapsed < 10,
            f"max |sequential - dense| = {worst:.2e} over 50 instances in {elapsed:.2f} s")


def test_2_hmm_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        m = hmm.GaussianHMM(rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(2), size=2),
                            rng.normal(0, 2, (2, 1)), rng.uniform(0.2, 3.0, (2, 1)))
        x = rng.normal(0, 2, 8)
        ref = hmm_enumerate(x, m.pi, m.A, m.means[:, 0], m.variances[:, 0])
        worst = max(worst, abs(hmm.log_likelihood(m, x) - ref))
    _report(2, worst < 1e-10, f"max |forward - enumeration| = {worst:.2e} over 20 models (L=2, T=8)")


def test_3_metric_oracle():
    rng = np.random.default_rng(11)
    worst_hand = worst_pearson = 0.0
    for _ in range(20):
        TP, TN, FP, FN = (int(v) for v in rng.integers(1, 500, 4))
        pred = np.array([1] * TP + [0] * TN + [1] * FP + [0] * FN, bool)
        truth = np.array([1] * TP + [0] * TN + [0] * FP + [1] * FN, bool)
        cm = confusion(pred, truth)
        se, sp = TP / (TP + FN), TN / (TN + FP)
        hand = {"se": se, "sp": sp, "acc": (TP + TN) / (TP + TN + FP + FN), "acc_adj": (se + sp) / 2,
                "mcc": (TP * TN - FP * FN) / np.sqrt(float((TP + FP) * (TP + FN) * (TN + FP) * (TN + FN)))}
        worst_hand = max(worst_hand, max(abs(getattr(cm, k) - v) for k, v in hand.items()))
        worst_pearson = max(worst_pearson, abs(cm.mcc - mcc_pearson(pred, truth)))
    _report(3, worst_hand < 1e-12 and worst_pearson < 1e-12,
            f"20 tables: max hand-formula gap {worst_hand:.1e}, max Pearson gap {worst_pearson:.1e}")


def test_4_dtw_oracle():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(300):
        a = rng.integers(-5, 6, int(rng.integers(1, 7))).astype(float)
        b = rng.integers(-5, 6, int(rng.integers(1, 7))).astype(float)
        mismatches += dtw_distance(a, b) != dtw_bruteforce(a, b)
    _report(4, mismatches == 0, f"{mismatches} mismatches between DP and brute force in 300 pairs (len <= 6)")


def test_5_study_ordering(study):
    med = {m: _median(study, m, "mcc") for m in ("arima", "ppd_iter2", "hmm")}
    se = {m: _median(study, m, "se") for m in ("arima", "ppd_iter1", "ppd_iter2", *MIXTURES, "hmm")}
    top_se = max(se, key=se.get)
    ok = (med["hmm"] >= med["arima"] + 0.05 and med["ppd_iter2"] >= med["arima"] + 0.05
          and top_se in MIXTURES)
    _report(5, ok, "median MCC " + ", ".join(f"{k}={v:.3f}" for k, v in med.items())
            + f"; highest median se: {top_se} ({se[top_se]:.3f})")


@pytest.mark.xfail(strict=True, reason="drift is not the weakest class and first-pass mixture "
                   "spike se is 0.91 under this implementation; see the decision notes")
def test_6_by_type(study):
    spike = {m: _mean(study, m, "se", "spike") for m in MIXTURES}
    weakest = {}
    for m in ("ppd_iter1", "ppd_iter2", "hmm"):
        by = {t: _mean(study, m, "se", t) for t in ANOMALY_TYPES}
        weakest[m] = min(by, key=by.get)
    ok = all(v >= 0.95 for v in spike.values()) and all(w == "drift" for w in weakest.values())
    _report(6, ok, "mean spike se " + ", ".join(f"{k}={v:.3f}" for k, v in spike.items())
            + "; lowest-se type " + ", ".join(f"{k}={v}" for k, v in weakest.items()))


@pytest.mark.xfail(strict=True, reason="the additive design's time-constant spatial field pulls "
                   "per-site phi below 0.8; see the decision notes")
def test_7_parameter_recovery():
    cfg = McmcConfig(chains=2, iters=1000, warmup=500, seed=1)
    beta_cov, phi_cov, phi_over = [], [], []
    for seed in range(20):
        ds = simulate_dataset(SimConfig(n_sites=10, T=120, q_ini=0.0, seed=seed))
        post = sample_posterior(ds.obs, ds.network, cfg=cfg)
        lo, hi = np.quantile(post.beta[:, 1], [0.025, 0.975])
        beta_cov.append(lo <= 1.0 <= hi)
        plo, phi_ = np.quantile(post.phi, [0.025, 0.975], axis=0)
        phi_cov.append(np.mean((plo <= 0.8) & (0.8 <= phi_)))
        dirty = simulate_dataset(SimConfig(n_sites=10, T=120, seed=seed))
        phi_over.append(sample_posterior(dirty.obs, dirty.network, cfg=cfg).phi.mean() > 0.8)
    b, p, o = np.mean(beta_cov), np.mean(phi_cov), np.mean(phi_over)
    _report(7, b >= 0.8 and p >= 0.8 and o > 0.5,
            f"beta_1 coverage {b:.2f}, phi coverage {p:.2f} (site intervals), "
            f"phi mean above truth with anomalies in {o:.2f} of replicates")


def test_8_false_positive_control():
    level = 0.95
    rows = run_benchmark(20, SimConfig(n_sites=15, T=60, q_ini=0.0), STUDY_MCMC, methods="all",
                         level=level, seed=100)
    limit = 2 * (1 - level) + 0.02
    rates = {m: max(r["flag_rate"] for r in rows if r["method"] == m and r["anomaly_type"] == "all")
             for m in dict.fromkeys(r["method"] for r in rows)}
    ok = len(rates) == 6 and all(v <= limit for v in rates.values())
    _report(8, ok, f"worst flag rate per detector (limit {limit:.2f}): "
            + ", ".join(f"{k}={v:.3f}" for k, v in rates.items()))


def test_9_event_detection():
    acc = []
    for seed in range(30):
        Y, z = event_levels(seed)
        ev, _ = detect_events_mhmm(Y, seed=seed)
        acc.append(np.mean(ev.is_event == z))
    _report(9, np.mean(acc) >= 0.9, f"mean MHMM accuracy {np.mean(acc):.3f} (min {np.min(acc):.3f}) over 30")


def _batches(obs, size):
    return [ObservationSet(obs.y[:, k:k + size], obs.x[:, k:k + size], obs.site_order,
                           obs.time_index[k:k + size]) for k in range(0, obs.T, size)]


def test_10_recursive(tmp_path):
    import json

    cfg = McmcConfig(chains=2, iters=800, warmup=400, seed=1)
    dist = []
    for seed in range(10):
        obs, net = model_data(5, 160, seed)
        pooled = sample_posterior(obs, net, cfg=cfg).beta.mean(axis=0)
        states, _ = fit_recursive(_batches(obs, 40), net, cfg=cfg, skip_threshold=1.0)
        dist.append([np.linalg.norm(s.prior_next.beta_mean - pooled) for s in states])
    mean_dist = np.mean(dist, axis=0)
    converges = bool(np.all(np.diff(mean_dist) <= 0))

    obs, net = model_data(4, 60, seed=3)
    parts = _batches(obs, 20)
    y = np.array(parts[1].y)
    y[:, ::2] += 25.0
    parts[1] = ObservationSet(y, parts[1].x, obs.site_order, parts[1].time_index)
    states, _ = fit_recursive(parts, net, cfg=cfg, skip_threshold=0.2, state_dir=tmp_path)
    saved = [json.loads((tmp_path / f"batch_00{i}.json").read_text()) for i in range(3)]
    skipped = [s["skipped"] for s in saved] == [False, True, False]
    carried = saved[1]["prior_next"] == saved[0]["prior_next"]
    _report(10, converges and skipped and carried,
            "mean distance to pooled beta by batch " + ", ".join(f"{d:.3f}" for d in mean_dist)
            + f"; corrupted batch skipped={skipped}, prior carried={carried}")
