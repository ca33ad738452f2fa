"""Simulate one labelled data set, fit the model and score every detector.

    python3 demos/detect_simulated.py [seed]

Takes about half a minute at the reduced scale used here.
"""
import sys

from ssnanomaly import (
    McmcConfig,
    SimConfig,
    confusion,
    detect_arima,
    detect_hmm,
    detect_mixture,
    detect_ppd,
    make_refit,
    posterior_predictive,
    sample_posterior,
    simulate_dataset,
)

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
ds = simulate_dataset(SimConfig(n_sites=15, T=60, seed=seed))
obs, net = ds.obs, ds.network
print(f"{obs.S} sites x {obs.T} times, {(ds.truth != 'none').mean():.1%} anomalous cells")

cfg = McmcConfig(chains=2, iters=1500, warmup=750, seed=seed)
post = sample_posterior(obs, net, cfg=cfg)
for name in ("beta_0", "beta_1", "sigma2_d", "alpha_d", "sigma2_0"):
    lo, hi = post.interval(name, 0.95)
    print(f"  {name:9s} {post.column(name).mean():7.3f}  [{lo:.3f}, {hi:.3f}]")
summary = posterior_predictive(post, obs, net, seed=seed)

labels = {
    "arima": detect_arima(obs),
    "ppd_iter1": detect_ppd(summary),
    "ppd_iter2": detect_ppd(summary, iterations=2, refit=make_refit(obs, net, cfg=cfg, seed=seed)),
    "mixture_iter1": detect_mixture(summary, seed=seed)[1],
    "hmm": detect_hmm(summary, seed=seed)[1],
}
print(f"\n{'method':14s} {'se':>6s} {'sp':>6s} {'mcc':>6s}")
for name, lab in labels.items():
    cm = confusion(lab, ds.truth)
    print(f"{name:14s} {cm.se:6.3f} {cm.sp:6.3f} {cm.mcc:6.3f}")
