"""Command-line front end: ``ssnanomaly <subcommand> ...``.

Every subcommand takes ``--seed`` and writes a ``*.config.json`` file with
all resolved settings next to its outputs.  Exit codes: 0 success, 2 usage
error, 3 data error, 4 numerical error.  Failures print one JSON object
``{"error": ..., "type": ..., "exit_code": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as sio
from .errors import DataError, InvalidConfig, NumericalError, SSNAnomalyError

log = logging.getLogger("ssnanomaly")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": str(exc), "type": type(exc).__name__, "exit_code": code}),
          file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _load_json(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: no such file")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: invalid JSON ({exc})") from None


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if hasattr(v, "__dataclass_fields__"):
        return _jsonable({f: getattr(v, f) for f in v.__dataclass_fields__})
    return v


def _write_config(target: Path, args: argparse.Namespace, resolved: dict) -> None:
    """Write ``config.json`` into a directory target, else ``<file>.config.json``."""
    cfg = {"subcommand": args.command,
           "args": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
           "resolved": resolved}
    path = target / "config.json" if target.suffix == "" else target.with_name(target.name + ".config.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(cfg), indent=2, sort_keys=True) + "\n")


def _mcmc_config(args):
    from .model import McmcConfig

    d = _load_json(getattr(args, "mcmc", None))
    d["seed"] = args.seed
    for key in ("chains", "iters", "warmup", "thin"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    return McmcConfig.from_dict(d)


def _load_inputs(args):
    net = sio.read_network(args.network, args.sites)
    obs, cov = sio.read_observations(args.obs, site_order=net.site_ids)
    return net, obs, cov


def _priors(args, obs, net):
    from .model import default_priors

    comps = tuple(c.strip() for c in args.components.split(",") if c.strip())
    return default_priors(obs, net, components=comps)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _add_model_inputs(p):
    p.add_argument("--network", required=True, help="segments CSV")
    p.add_argument("--sites", required=True, help="site placements CSV")
    p.add_argument("--obs", required=True, help="observations CSV")
    p.add_argument("--mcmc", help="sampler settings JSON (McmcConfig fields)")
    p.add_argument("--chains", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--components", default="taildown",
                   help="comma-separated covariance components: tailup,taildown,euclid")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from .simulate import SimConfig, simulate_dataset

    d = _load_json(args.config)
    d["seed"] = args.seed
    cfg = SimConfig.from_dict(d)
    ds = simulate_dataset(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sio.write_network(ds.network, out / "network.csv", out / "sites.csv")
    names = ["intercept"] + [f"x{k}" for k in range(1, ds.obs.p)]
    sio.write_observations(ds.obs, out / "observations.csv", names)
    sio.write_truth(ds.truth, ds.obs.site_order, ds.obs.time_index, out / "truth.csv")
    _write_config(out, args, {"sim": cfg.to_dict()})
    return EXIT_OK


def cmd_fit(args) -> int:
    from .model import posterior_predictive, sample_posterior

    net, obs, cov = _load_inputs(args)
    cfg = _mcmc_config(args)
    priors = _priors(args, obs, net)
    post = sample_posterior(obs, net, priors, cfg)
    summ = posterior_predictive(post, obs, net, level=args.level, seed=args.seed)
    out = Path(args.out)
    _write_csv(out / "draws.csv", ["chain", *post.param_names],
               [[int(c), *row] for c, row in zip(post.chain_ids, post.draws)])
    rows = []
    for s, sid in enumerate(obs.site_order):
        for t, tt in enumerate(obs.time_index):
            rows.append([sid, tt, summ.y[s, t], summ.mean[s, t], summ.sd[s, t], summ.lower[s, t],
                         summ.upper[s, t], summ.residual[s, t], summ.pit[s, t]])
    _write_csv(out / "predictive.csv",
               ["site_id", "time", "value", "mean", "sd", "lower", "upper", "residual", "pit"], rows)
    summary = {
        "acceptance_rates": post.acceptance_rates,
        "posterior_mean": dict(zip(post.param_names, post.draws.mean(axis=0))),
        "interval_95": {n: post.interval(n, 0.95) for n in post.param_names},
        "covariates": cov,
    }
    (out / "posterior_summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    _write_config(out, args, {"mcmc": cfg.to_dict(), "priors": _prior_dict(priors),
                              "level": args.level})
    return EXIT_OK


def _prior_dict(priors):
    from .recursive import prior_to_dict

    return prior_to_dict(priors)


def cmd_detect(args) -> int:
    from .detectors import detect_arima, detect_hmm, detect_mixture, detect_ppd, make_refit
    from .model import posterior_predictive, sample_posterior

    net, obs, _ = _load_inputs(args)
    resolved = {"method": args.method, "level": args.level}
    if args.method == "arima":
        labels = detect_arima(obs, level=args.level, max_p=args.max_p, max_q=args.max_q,
                              d_max=args.d_max)
        resolved.update(max_p=args.max_p, max_q=args.max_q, d_max=args.d_max)
    else:
        cfg = _mcmc_config(args)
        priors = _priors(args, obs, net)
        post = sample_posterior(obs, net, priors, cfg)
        summ = posterior_predictive(post, obs, net, level=args.level, seed=args.seed)
        resolved.update(mcmc=cfg.to_dict(), priors=_prior_dict(priors))
        if args.method == "ppd":
            refit = make_refit(obs, net, priors, cfg, args.level, args.seed)
            labels = detect_ppd(summ, iterations=args.iterations, refit=refit)
            resolved["iterations"] = args.iterations
        elif args.method == "mixture":
            fit, labels = detect_mixture(summ, K=args.k, iterations=args.iterations, seed=args.seed,
                                         weights=args.weights)
            resolved.update(k=args.k, iterations=args.iterations, weights=args.weights,
                            components_kept=fit.n_components)
        else:
            fit, labels = detect_hmm(summ, L=args.l, seed=args.seed)
            resolved.update(l=args.l, states_kept=fit.n_states)
    out = Path(args.out)
    sio.write_labels(labels, obs.site_order, obs.time_index, out)
    _write_config(out, args, resolved)
    return EXIT_OK


def _level_matrix(path):
    obs, _ = sio.read_observations(path, covariates=[], add_intercept=True)
    return obs


def cmd_events(args) -> int:
    from .impale import detect_events_mhmm, impute_multivariate

    obs = _level_matrix(args.inp)
    Y = impute_multivariate(obs.y, blend=args.blend) if obs.missing.any() else np.array(obs.y)
    events, _ = detect_events_mhmm(Y, L=2, seed=args.seed)
    out = Path(args.out)
    sio.write_events(events, obs.time_index, out)
    _write_config(out, args, {"imputed_cells": int(obs.missing.sum()), "blend": args.blend})
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .impale import cluster_sites, impute_multivariate

    obs = _level_matrix(args.inp)
    Y = impute_multivariate(obs.y, blend=args.blend) if obs.missing.any() else np.array(obs.y)
    cl = cluster_sites(Y, args.k, window=args.window)
    out = Path(args.out)
    _write_csv(out, ["site_id", "cluster"], [[s, int(c)] for s, c in zip(obs.site_order, cl.labels)])
    dist = out.with_name(out.stem + "_distances.csv")
    _write_csv(dist, ["site_id", *obs.site_order],
               [[s, *row] for s, row in zip(obs.site_order, cl.distances)])
    _write_config(out, args, {"k": args.k, "window": args.window, "blend": args.blend})
    return EXIT_OK


def _read_pred(path):
    """Predictions CSV, or a truth CSV read as a perfect prediction of itself."""
    from .detectors import AnomalyLabels

    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "flag" not in header and "type" in header:
        truth, sids, times = sio.read_truth(path)
        known = truth != ""
        flag = np.where(known, (truth != "none").astype(np.int8), -1).astype(np.int8)
        score = np.where(known, flag, np.nan).astype(float)
        return AnomalyLabels(flag, score, "truth"), sids, times
    return sio.read_labels(path)


def cmd_evaluate(args) -> int:
    from .evaluate import confusion

    labels, sids, times = _read_pred(args.pred)
    truth, _, _ = sio.read_truth(args.truth, site_order=sids, times=times)
    kinds = ["all"]
    if args.by_type:
        kinds += sorted({t for t in np.unique(truth) if t not in ("none", "")})
    rows = []
    for k in kinds:
        cm = confusion(labels, truth, by_type=None if k == "all" else k)
        rows.append({"anomaly_type": k, **cm.to_dict()})
    out = Path(args.out)
    if out.suffix == ".csv":
        _write_csv(out, list(rows[0]), [list(r.values()) for r in rows])
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(_jsonable(rows), indent=2) + "\n")
    _write_config(out, args, {"types": kinds})
    return EXIT_OK


def _batches(obs, by: str, size: int):
    T = obs.T
    if by == "n_ticks":
        if size < 2:
            raise InvalidConfig("--batch-size must be >= 2")
        edges = list(range(0, T, size)) + [T]
    else:
        if not np.issubdtype(obs.time_index.dtype, np.datetime64):
            raise DataError("--batch-by month needs date/datetime values in the time column")
        months = obs.time_index.astype("datetime64[M]")
        edges = [0] + [t for t in range(1, T) if months[t] != months[t - 1]] + [T]
    return [obs.time_slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def cmd_recursive(args) -> int:
    from .recursive import fit_recursive

    net, obs, _ = _load_inputs(args)
    cfg = _mcmc_config(args)
    batches = _batches(obs, args.batch_by, args.batch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    priors = _priors(args, batches[0], net)
    states, labels = fit_recursive(batches, net, priors, cfg, skip_threshold=args.skip_threshold,
                                   level=args.level, state_dir=out / "states", seed=args.seed)
    sio.write_labels(labels, obs.site_order, obs.time_index, out / "predictions.csv")
    _write_csv(out / "batches.csv", ["batch", "start", "stop", "anomaly_fraction", "skipped"],
               [[s.index, b.time_index[0], b.time_index[-1], s.anomaly_fraction, int(s.skipped)]
                for s, b in zip(states, batches)])
    _write_config(out, args, {"mcmc": cfg.to_dict(), "n_batches": len(batches),
                              "initial_priors": _prior_dict(priors)})
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .benchmark import MEASURES, run_benchmark, summarize, workers_from_env
    from .simulate import SimConfig

    d = _load_json(args.config)
    d.pop("seed", None)
    sim = SimConfig.from_dict(d)
    if args.sites is not None or args.T is not None:
        sim = replace(sim, n_sites=args.sites or sim.n_sites, T=args.T or sim.T).validate()
    cfg = _mcmc_config(args)
    methods = None if args.methods == "all" else [m.strip() for m in args.methods.split(",")]
    workers = args.workers or workers_from_env()
    rows = run_benchmark(args.replicates, sim, cfg, methods, args.level, args.seed, workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(rows)
    _write_csv(out / "benchmark_summary.csv", list(summary[0]), [list(r.values()) for r in summary])
    cols = ["replicate", "method", "anomaly_type", "flag_rate", "TP", "TN", "FP", "FN", *MEASURES]
    _write_csv(out / "benchmark_replicates.csv", cols, [[r[c] for c in cols] for r in rows])
    _write_config(out, args, {"sim": sim.to_dict(), "mcmc": cfg.to_dict(), "workers": workers})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssnanomaly", description="Anomaly detection for stream-network sensor data.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a labelled benchmark data set")
    sp.add_argument("--config", help="SimConfig JSON")
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("fit", cmd_fit, "fit the spatio-temporal model")
    _add_model_inputs(sp)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("detect", cmd_detect, "flag anomalies")
    _add_model_inputs(sp)
    sp.add_argument("--method", choices=["ppd", "mixture", "hmm", "arima"], required=True)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--iterations", type=int, choices=[1, 2], default=1)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--l", type=int, default=2)
    sp.add_argument("--weights", choices=["equal", "estimate"], default="equal")
    sp.add_argument("--max-p", type=int, default=3)
    sp.add_argument("--max-q", type=int, default=3)
    sp.add_argument("--d-max", type=int, default=1)
    sp.add_argument("--out", required=True, help="predictions CSV")

    sp = add("events", cmd_events, "label ambient / event periods")
    sp.add_argument("--in", dest="inp", required=True, help="level CSV (site_id,time,value)")
    sp.add_argument("--blend", type=float, default=0.5)
    sp.add_argument("--out", required=True, help="events CSV")

    sp = add("cluster", cmd_cluster, "cluster sites by DTW distance")
    sp.add_argument("--in", dest="inp", required=True, help="level CSV (site_id,time,value)")
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--window", type=int)
    sp.add_argument("--blend", type=float, default=0.5)
    sp.add_argument("--out", required=True, help="clusters CSV")

    sp = add("evaluate", cmd_evaluate, "score predictions against truth labels")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--by-type", action="store_true")
    sp.add_argument("--out", required=True, help="metrics .json or .csv")

    sp = add("recursive", cmd_recursive, "batch-recursive fitting and PPD detection")
    _add_model_inputs(sp)
    sp.add_argument("--batch-by", choices=["month", "n_ticks"], default="n_ticks")
    sp.add_argument("--batch-size", type=int, default=50)
    sp.add_argument("--skip-threshold", type=float, default=0.2)
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--out", required=True, help="output directory")

    sp = add("benchmark", cmd_benchmark, "run the simulation study")
    sp.add_argument("--config", help="SimConfig JSON")
    sp.add_argument("--mcmc", help="sampler settings JSON")
    sp.add_argument("--chains", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--warmup", type=int)
    sp.add_argument("--thin", type=int)
    sp.add_argument("--replicates", type=int, default=20)
    sp.add_argument("--sites", type=int, help="override n_sites")
    sp.add_argument("--T", type=int, help="override T")
    sp.add_argument("--methods", default="all")
    sp.add_argument("--level", type=float, default=0.95)
    sp.add_argument("--workers", type=int, help="defaults to $SSNANOMALY_WORKERS or 1")
    sp.add_argument("--out", required=True, help="output directory")
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except DataError as exc:
        return _fail(exc, EXIT_DATA)
    except NumericalError as exc:
        return _fail(exc, EXIT_NUMERIC)
    except SSNAnomalyError as exc:
        return _fail(exc, EXIT_NUMERIC)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(exc, EXIT_DATA)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
