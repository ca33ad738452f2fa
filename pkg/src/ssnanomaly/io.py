"""CSV readers and writers for networks, observations, labels and events.

All files carry a header row.  Schemas:

===============  ==================================================
network.csv      ``segment_id,downstream_id,length,additive_weight``
sites.csv        ``site_id,segment_id,upstream_offset,x,y``
observations     ``site_id,time,value[,covariate ...]``
truth            ``site_id,time,type``
predictions      ``site_id,time,flag,score,method``
events           ``time,state,probability``
===============  ==================================================

``downstream_id`` is empty for the outlet.  ``value`` is empty for a
missing response.  ``time`` is numeric, or an ISO date / datetime.
Floats are written with ``repr`` so a read-write round trip is exact.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .model import ObservationSet
from .network import Segment, SitePlacement, StreamNetwork, build_network

__all__ = [
    "write_network",
    "read_network",
    "write_observations",
    "read_observations",
    "write_truth",
    "read_truth",
    "write_labels",
    "read_labels",
    "write_events",
    "read_events",
]

NETWORK_HEADER = ["segment_id", "downstream_id", "length", "additive_weight"]
SITES_HEADER = ["site_id", "segment_id", "upstream_offset", "x", "y"]
TRUTH_HEADER = ["site_id", "time", "type"]
LABELS_HEADER = ["site_id", "time", "flag", "score", "method"]
EVENTS_HEADER = ["time", "state", "probability"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, np.datetime64):
        return str(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _rows(path, required: Sequence[str]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        return header, list(reader)


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _float(s: str, what: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise DataError(f"bad number for {what}: {s!r}") from None


def _parse_times(raw: Sequence[str]) -> np.ndarray:
    """Numeric times if every entry parses as a number, else datetime64."""
    try:
        vals = np.array([float(t) for t in raw])
        if np.all(vals == np.round(vals)):
            return vals.astype(np.int64)
        return vals
    except ValueError:
        pass
    try:
        return np.array(raw, dtype="datetime64")
    except ValueError:
        raise DataError("time column must be numeric or ISO dates") from None


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def write_network(net: StreamNetwork, network_csv, sites_csv) -> None:
    _write(network_csv, NETWORK_HEADER,
           [[s.id, s.downstream_id or "", s.length, s.additive_weight] for s in net.segments])
    _write(sites_csv, SITES_HEADER,
           [[p.site_id, p.segment_id, p.upstream_offset, p.xy[0], p.xy[1]] for p in net.sites])


def read_network(network_csv, sites_csv) -> StreamNetwork:
    _, rows = _rows(network_csv, NETWORK_HEADER)
    segs = [Segment(r["segment_id"], r["downstream_id"] or None,
                    _float(r["length"], "length"), _float(r["additive_weight"], "additive_weight"))
            for r in rows]
    _, rows = _rows(sites_csv, SITES_HEADER[:3])
    sites = [SitePlacement(r["site_id"], r["segment_id"], _float(r["upstream_offset"], "upstream_offset"),
                           (_float(r.get("x") or "0", "x"), _float(r.get("y") or "0", "y")))
             for r in rows]
    return build_network(segs, sites)


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


def write_observations(obs: ObservationSet, path, covariate_names: Optional[Sequence[str]] = None):
    """Long-format observations; covariate columns default to ``x0..x{p-1}``."""
    names = list(covariate_names) if covariate_names else [f"x{k}" for k in range(obs.p)]
    if len(names) != obs.p:
        raise DataError("one name per covariate column is needed")
    rows = []
    for s, sid in enumerate(obs.site_order):
        for t, tt in enumerate(obs.time_index):
            rows.append([sid, tt, obs.y[s, t], *obs.x[s, t]])
    _write(path, ["site_id", "time", "value", *names], rows)


def read_observations(path, site_order: Optional[Sequence[str]] = None,
                      covariates: Optional[Sequence[str]] = None,
                      add_intercept: Optional[bool] = None):
    """Read long-format observations into an :class:`ObservationSet`.

    Parameters
    ----------
    site_order : sequence of str, optional
        Row order (e.g. the network's site ids).  Defaults to order of
        first appearance.
    covariates : sequence of str, optional
        Covariate columns to use; defaults to every column after ``value``.
    add_intercept : bool, optional
        Prepend a column of ones.  By default an intercept is added unless
        the first covariate is constant 1.

    Returns
    -------
    (ObservationSet, list of str)
        The data and the covariate column names (``"intercept"`` first if
        one was added).  Cells without a row are missing.
    """
    header, rows = _rows(path, ["site_id", "time", "value"])
    if not rows:
        raise DataError(f"{path}: no observations")
    extra = header[header.index("value") + 1:]
    cov = list(covariates) if covariates is not None else extra
    bad = [c for c in cov if c not in header]
    if bad:
        raise DataError(f"{path}: unknown covariate columns {bad}")
    sids = [r["site_id"] for r in rows]
    order = list(site_order) if site_order is not None else list(dict.fromkeys(sids))
    unknown = set(sids) - set(order)
    if unknown:
        raise DataError(f"{path}: sites not in the network: {sorted(unknown)[:5]}")
    times = _parse_times([r["time"] for r in rows])
    grid = np.unique(times)
    S, T, p = len(order), grid.size, len(cov)
    si = {s: k for k, s in enumerate(order)}
    ti = np.searchsorted(grid, times)
    y = np.full((S, T), np.nan)
    x = np.full((S, T, p), np.nan)
    seen = np.zeros((S, T), dtype=bool)
    for r, t in zip(rows, ti):
        s = si[r["site_id"]]
        if seen[s, t]:
            raise DataError(f"{path}: duplicate row for site {r['site_id']} at {r['time']}")
        seen[s, t] = True
        v = r["value"].strip()
        y[s, t] = _float(v, "value") if v and v.lower() != "nan" else np.nan
        for k, c in enumerate(cov):
            x[s, t, k] = _float(r[c], c)
    if p and np.isnan(x).any():
        # covariates of absent rows: carry the nearest observed row per site
        for s in range(S):
            for k in range(p):
                col = x[s, :, k]
                ok = ~np.isnan(col)
                if not ok.any():
                    raise DataError(f"{path}: site {order[s]} has no covariate rows")
                idx = np.flatnonzero(ok)
                col[~ok] = col[idx[np.abs(idx[:, None] - np.flatnonzero(~ok)).argmin(axis=0)]]
    if add_intercept is None:
        add_intercept = not (p and np.all(x[:, :, 0] == 1.0))
    if add_intercept:
        x = np.concatenate([np.ones((S, T, 1)), x], axis=2)
        cov = ["intercept", *cov]
    return ObservationSet(y, x, tuple(order), grid), cov


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------


def write_truth(truth: np.ndarray, site_ids, times, path) -> None:
    truth = np.asarray(truth)
    _write(path, TRUTH_HEADER,
           [[sid, tt, truth[s, t]] for s, sid in enumerate(site_ids) for t, tt in enumerate(times)])


def _grid(rows, site_order, times):
    sids = [r["site_id"] for r in rows]
    order = list(site_order) if site_order is not None else list(dict.fromkeys(sids))
    tvals = _parse_times([r["time"] for r in rows])
    grid = np.unique(tvals) if times is None else np.asarray(times)
    si = {s: k for k, s in enumerate(order)}
    pos = np.searchsorted(grid, tvals)
    ok = (pos < grid.size) & (grid[np.minimum(pos, grid.size - 1)] == tvals)
    if not ok.all() or any(s not in si for s in sids):
        raise DataError("labels refer to sites or times outside the grid")
    return order, grid, [si[s] for s in sids], pos


def read_truth(path, site_order=None, times=None):
    """Returns ``(truth (S, T) str array, site ids, times)``; absent cells are ``""``."""
    _, rows = _rows(path, TRUTH_HEADER)
    order, grid, si, ti = _grid(rows, site_order, times)
    out = np.full((len(order), grid.size), "", dtype=object)
    for r, s, t in zip(rows, si, ti):
        out[s, t] = r["type"].strip() or "none"
    return out.astype(str), order, grid


def write_labels(labels, site_ids, times, path) -> None:
    rows = []
    for s, sid in enumerate(site_ids):
        for t, tt in enumerate(times):
            rows.append([sid, tt, int(labels.flag[s, t]), float(labels.score[s, t]), labels.method])
    _write(path, LABELS_HEADER, rows)


def read_labels(path, site_order=None, times=None):
    """Returns ``(AnomalyLabels, site ids, times)``; absent cells are missing."""
    from .detectors import FLAG_MISSING, AnomalyLabels

    _, rows = _rows(path, LABELS_HEADER)
    order, grid, si, ti = _grid(rows, site_order, times)
    flag = np.full((len(order), grid.size), FLAG_MISSING, dtype=np.int8)
    score = np.full(flag.shape, np.nan)
    for r, s, t in zip(rows, si, ti):
        f = int(r["flag"])
        if f not in (-1, 0, 1):
            raise DataError(f"flag must be -1, 0 or 1, got {f}")
        flag[s, t] = f
        score[s, t] = _float(r["score"], "score") if r["score"] else np.nan
    methods = {r["method"] for r in rows}
    return AnomalyLabels(flag, score, methods.pop() if len(methods) == 1 else "mixed"), order, grid


def write_events(events, times, path) -> None:
    _write(path, EVENTS_HEADER,
           [[tt, events.state[t], float(events.probability[t])] for t, tt in enumerate(times)])


def read_events(path):
    from .impale import EventLabels

    _, rows = _rows(path, EVENTS_HEADER)
    times = _parse_times([r["time"] for r in rows])
    state = np.array([r["state"] for r in rows])
    prob = np.array([_float(r["probability"], "probability") for r in rows])
    return EventLabels(state, prob), times
