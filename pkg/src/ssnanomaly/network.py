"""Stream-network topology and the distance structures used by the kernels.

A network is a rooted tree of segments draining to a single outlet.  Every
segment stores its length and an additive-function value (flow volume,
Shreve order, ...).  Sites sit on segments at an offset measured upstream
from the segment's downstream node.

From the topology :func:`build_network` derives, for every pair of sites,

* the stream (in-network) distance,
* the distances from each site of a flow-unconnected pair to their common
  junction (``D_a <= D_b``),
* flow connectivity,
* Euclidean distance, and
* the tail-up weight ``sqrt(w_up / w_down)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DanglingDownstreamId,
    DataError,
    MultipleOutlets,
    SiteOffsetOutOfRange,
    TooManySites,
)

__all__ = [
    "Segment",
    "SitePlacement",
    "StreamNetwork",
    "build_network",
    "generate_random_network",
]

_TOL = 1e-9


@dataclass(frozen=True)
class Segment:
    id: str
    downstream_id: Optional[str]
    length: float
    additive_weight: float


@dataclass(frozen=True)
class SitePlacement:
    site_id: str
    segment_id: str
    upstream_offset: float
    xy: tuple = (0.0, 0.0)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StreamNetwork:
    """Immutable network plus the derived S x S site matrices.

    Attributes
    ----------
    D_stream : ndarray (S, S)
        Stream distance.  For unconnected pairs this is ``D_a + D_b``.
    D_a, D_b : ndarray (S, S)
        Distance from each site of a pair to their common junction, with
        ``D_a <= D_b``.  Flow-connected pairs carry ``(0, h)``.
    connected : ndarray of bool (S, S)
    D_euclid : ndarray (S, S)
    W : ndarray (S, S)
        Tail-up weights; zero exactly for flow-unconnected pairs.
    """

    segments: tuple
    sites: tuple
    D_stream: np.ndarray = field(repr=False)
    D_a: np.ndarray = field(repr=False)
    D_b: np.ndarray = field(repr=False)
    connected: np.ndarray = field(repr=False)
    D_euclid: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def site_ids(self) -> list:
        return [s.site_id for s in self.sites]

    @property
    def max_distance(self) -> float:
        """Largest stream or Euclidean distance between two sites."""
        if self.n_sites < 2:
            return 0.0
        return float(max(self.D_stream.max(), self.D_euclid.max()))

    def subset(self, site_ids: Sequence[str]) -> "StreamNetwork":
        """Network restricted to (and reordered by) ``site_ids``."""
        by_id = {s.site_id: s for s in self.sites}
        try:
            sites = [by_id[i] for i in site_ids]
        except KeyError as exc:
            raise DataError(f"unknown site id {exc.args[0]!r}") from None
        return build_network(list(self.segments), sites)


def _index_segments(segments):
    by_id = {}
    for seg in segments:
        if seg.id in by_id:
            raise DataError(f"duplicate segment id {seg.id!r}")
        if not seg.length > 0:
            raise DataError(f"segment {seg.id!r}: length must be > 0")
        if not seg.additive_weight > 0:
            raise DataError(f"segment {seg.id!r}: additive_weight must be > 0")
        by_id[seg.id] = seg
    return by_id


def _downstream_paths(by_id):
    """Map segment id -> list of segment ids from itself down to the outlet."""
    for seg in by_id.values():
        if seg.downstream_id is not None and seg.downstream_id not in by_id:
            raise DanglingDownstreamId(
                f"segment {seg.id!r} points to missing segment {seg.downstream_id!r}")
    outlets = [s.id for s in by_id.values() if s.downstream_id is None]
    if len(outlets) > 1:
        raise MultipleOutlets(f"{len(outlets)} outlets: {outlets[:5]}")
    if not outlets:
        raise CycleDetected("no outlet segment; downstream links form a cycle")

    paths = {}
    for start in by_id:
        if start in paths:
            continue
        walk = []
        seen = set()
        cur = start
        while cur is not None and cur not in paths:
            if cur in seen:
                raise CycleDetected(f"cycle through segment {cur!r}")
            seen.add(cur)
            walk.append(cur)
            cur = by_id[cur].downstream_id
        tail = paths[cur] if cur is not None else []
        for k in range(len(walk) - 1, -1, -1):
            tail = [walk[k]] + tail
            paths[walk[k]] = tail
    return paths


def build_network(segments: Sequence[Segment], sites: Sequence[SitePlacement]) -> StreamNetwork:
    """Validate the topology and compute all pairwise site matrices.

    Raises
    ------
    CycleDetected, MultipleOutlets, DanglingDownstreamId
        The segments do not form a rooted tree.
    SiteOffsetOutOfRange
        A site offset lies outside ``[0, segment length]``.
    """
    segments = tuple(segments)
    sites = tuple(sites)
    by_id = _index_segments(segments)
    paths = _downstream_paths(by_id)

    for seg in segments:
        if seg.downstream_id is not None:
            down = by_id[seg.downstream_id]
            if seg.additive_weight > down.additive_weight * (1 + _TOL):
                raise DataError(
                    f"additive weight decreases downstream from {seg.id!r} to {down.id!r}")

    # distance from each segment's downstream node to the outlet
    base = {}
    for sid, path in paths.items():
        base[sid] = sum(by_id[p].length for p in path[1:])

    seen_sites = set()
    for s in sites:
        if s.site_id in seen_sites:
            raise DataError(f"duplicate site id {s.site_id!r}")
        seen_sites.add(s.site_id)
        if s.segment_id not in by_id:
            raise DataError(f"site {s.site_id!r} on unknown segment {s.segment_id!r}")
        length = by_id[s.segment_id].length
        if not (-_TOL <= s.upstream_offset <= length + _TOL):
            raise SiteOffsetOutOfRange(
                f"site {s.site_id!r}: offset {s.upstream_offset} outside [0, {length}]")

    n = len(sites)
    d_out = np.array([base[s.segment_id] + s.upstream_offset for s in sites])
    weight = np.array([by_id[s.segment_id].additive_weight for s in sites])
    xy = np.array([tuple(s.xy) for s in sites], dtype=float).reshape(n, 2)

    D_stream = np.zeros((n, n))
    D_a = np.zeros((n, n))
    D_b = np.zeros((n, n))
    conn = np.eye(n, dtype=bool)
    W = np.eye(n)
    path_sets = [set(paths[s.segment_id]) for s in sites]

    for i in range(n):
        si = sites[i].segment_id
        for j in range(i + 1, n):
            sj = sites[j].segment_id
            if si == sj or si in path_sets[j] or sj in path_sets[i]:
                h = abs(d_out[i] - d_out[j])
                conn[i, j] = conn[j, i] = True
                D_stream[i, j] = D_stream[j, i] = h
                D_b[i, j] = D_b[j, i] = h
                lo, hi = sorted((weight[i], weight[j]))
                W[i, j] = W[j, i] = np.sqrt(lo / hi)
            else:
                common = next(p for p in paths[si] if p in path_sets[j])
                junction = base[common] + by_id[common].length
                a, b = sorted((d_out[i] - junction, d_out[j] - junction))
                D_a[i, j] = D_a[j, i] = a
                D_b[i, j] = D_b[j, i] = b
                D_stream[i, j] = D_stream[j, i] = a + b

    diff = xy[:, None, :] - xy[None, :, :]
    D_euclid = np.sqrt((diff ** 2).sum(axis=-1))

    return StreamNetwork(
        segments=segments,
        sites=sites,
        D_stream=_frozen(D_stream),
        D_a=_frozen(D_a),
        D_b=_frozen(D_b),
        connected=_frozen(conn),
        D_euclid=_frozen(D_euclid),
        W=_frozen(W),
    )


def generate_random_network(n_segments: int, n_sites: int, seed: int = 0) -> StreamNetwork:
    """Grow a random binary-branching network from the outlet.

    Repeatedly picks a random headwater segment and attaches two upstream
    tributaries (one when a single segment remains in the budget).  Segment
    lengths are uniform on (0.5, 1.5); the additive function is the number
    of headwaters upstream (Shreve order).  Sites go on ``n_sites`` distinct
    segments at uniform offsets.
    """
    if n_segments < 1:
        raise DataError("n_segments must be >= 1")
    if n_sites < 1:
        raise DataError("n_sites must be >= 1")
    if n_sites > n_segments:
        raise TooManySites(f"{n_sites} sites requested on {n_segments} segments")
    rng = np.random.default_rng(seed)

    parent = [-1]
    angle = [np.pi / 2]
    children = [[]]
    leaves = [0]
    while len(parent) < n_segments:
        k = int(rng.integers(len(leaves)))
        node = leaves.pop(k)
        n_new = min(2, n_segments - len(parent))
        spread = rng.uniform(0.2, 0.8)
        for c in range(n_new):
            sign = -1.0 if c == 0 else 1.0
            parent.append(node)
            angle.append(angle[node] + (sign * spread if n_new == 2 else rng.normal(0, 0.2)))
            children.append([])
            children[node].append(len(parent) - 1)
            leaves.append(len(parent) - 1)

    lengths = rng.uniform(0.5, 1.5, size=n_segments)
    weight = np.ones(n_segments)
    for i in range(n_segments - 1, -1, -1):
        if children[i]:
            weight[i] = sum(weight[c] for c in children[i])

    start = np.zeros((n_segments, 2))
    for i in range(1, n_segments):
        p = parent[i]
        start[i] = start[p] + lengths[p] * np.array([np.cos(angle[p]), np.sin(angle[p])])

    segments = [
        Segment(str(i), None if parent[i] < 0 else str(parent[i]), float(lengths[i]), float(weight[i]))
        for i in range(n_segments)
    ]
    chosen = np.sort(rng.choice(n_segments, size=n_sites, replace=False))
    sites = []
    for k, i in enumerate(chosen):
        off = float(rng.uniform(0.0, lengths[i]))
        direction = np.array([np.cos(angle[i]), np.sin(angle[i])])
        x, y = start[i] + off * direction
        sites.append(SitePlacement(f"s{k + 1}", str(i), off, (float(x), float(y))))
    return build_network(segments, sites)
