"""Average Path Length Similarity between a truth and a proposal road graph.

Control nodes of one graph are snapped onto the nearest edge of the other
(within a buffer), splitting that edge.  Every connected pair of control
nodes then compares its path length in the source graph with the length of
the path between the snapped counterparts.  The proportional difference is
capped at 1, missing or unsnapped routes count as 1, and the score is one
minus the mean.  The comparison runs in both directions and the two parts
are combined with a harmonic mean.
"""

from __future__ import annotations

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .roadgraph import (
    COINCIDENCE_TOLERANCE,
    DEFAULT_MERGE_TOLERANCE,
    DEFAULT_MIDPOINT_SPACING,
    ControlNodeSet,
    Edge,
    NodeKind,
    RoadGraph,
    build_graph,
    control_nodes,
    inject_midpoints,
)

DEFAULT_BUFFER = 4.0
TIE_TOLERANCE = 1e-9
# control points per vectorised distance block
_CHUNK = 256


@dataclass
class SnapResult:
    augmented: RoadGraph
    mapping: dict  # control node id -> node id in ``augmented``, or None if unsnapped
    buffer: float
    distances: dict = field(default_factory=dict)

    @property
    def unsnapped(self) -> list[int]:
        return sorted(k for k, v in self.mapping.items() if v is None)


class DirectionScore(NamedTuple):
    score: float
    paths: int
    missing: int


@dataclass
class AplsScore:
    part1: float
    part2: float
    total: float
    path_counts: tuple[int, int]
    missing_paths: tuple[int, int]


def harmonic_mean(a: float, b: float) -> float:
    if a <= 0.0 or b <= 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def _segment_table(graph: RoadGraph):
    """Flatten edges into segment arrays ordered by (edge index, segment index)."""
    x1, y1, x2, y2, edge, offset, seglen = [], [], [], [], [], [], []
    for ei, e in enumerate(graph.edges):
        verts = e.geometry.vertices
        cum = e.geometry._cumulative
        for si in range(len(verts) - 1):
            a, b = verts[si], verts[si + 1]
            x1.append(a.x)
            y1.append(a.y)
            x2.append(b.x)
            y2.append(b.y)
            edge.append(ei)
            offset.append(cum[si])
            seglen.append(cum[si + 1] - cum[si])
    return tuple(np.asarray(v, dtype=float) for v in (x1, y1, x2, y2)) + (
        np.asarray(edge, dtype=int), np.asarray(offset), np.asarray(seglen))


def _nearest_edges(points: np.ndarray, table):
    """For each point: (distance, edge index, arc position along that edge)."""
    x1, y1, x2, y2, edge, offset, seglen = table
    dx, dy = x2 - x1, y2 - y1
    dd = dx * dx + dy * dy
    out_d = np.empty(len(points))
    out_e = np.empty(len(points), dtype=int)
    out_s = np.empty(len(points))
    for start in range(0, len(points), _CHUNK):
        px = points[start:start + _CHUNK, 0:1]
        py = points[start:start + _CHUNK, 1:2]
        t = np.clip(((px - x1) * dx + (py - y1) * dy) / dd, 0.0, 1.0)
        d = np.hypot(px - (x1 + t * dx), py - (y1 + t * dy))
        dmin = d.min(axis=1, keepdims=True)
        # first segment within the tie tolerance, i.e. the lowest edge index
        k = np.argmax(d <= dmin + TIE_TOLERANCE, axis=1)
        rows = np.arange(len(k))
        out_d[start:start + len(k)] = d[rows, k]
        out_e[start:start + len(k)] = edge[k]
        out_s[start:start + len(k)] = offset[k] + t[rows, k] * seglen[k]
    return out_d, out_e, out_s


def snap_control_nodes(controls: ControlNodeSet, target: RoadGraph,
                       buffer: float = DEFAULT_BUFFER) -> SnapResult:
    """Inject the control nodes of one graph into ``target`` at their nearest edge points.

    Nodes farther than ``buffer`` from every edge of ``target`` stay unsnapped.
    Snap points that land on an existing node reuse it; points landing inside
    an edge split it, conserving its length.
    """
    if not buffer >= 0:
        raise ConfigurationError(f"buffer must be non-negative, got {buffer}")
    ids = list(controls.ids)
    mapping = {n: None for n in ids}
    distances = {}
    if target.is_empty or not ids:
        return SnapResult(target, mapping, buffer, distances)

    pts = np.array([controls.graph.nodes[n] for n in ids], dtype=float)
    dist, edge_idx, pos = _nearest_edges(pts, _segment_table(target))

    per_edge = defaultdict(list)
    for n, d, ei, s in zip(ids, dist, edge_idx, pos):
        distances[n] = float(d)
        if d <= buffer:
            per_edge[int(ei)].append((float(s), n))

    nodes = dict(target.nodes)
    kinds = dict(target.node_kind)
    next_id = max(nodes, default=-1) + 1
    edges = []
    for ei, e in enumerate(target.edges):
        hits = per_edge.get(ei)
        if not hits:
            edges.append(e)
            continue
        length = e.length
        hits.sort()
        cuts = []  # [position, [control ids]]
        for s, n in hits:
            if s <= COINCIDENCE_TOLERANCE:
                mapping[n] = e.a
            elif s >= length - COINCIDENCE_TOLERANCE:
                mapping[n] = e.b
            elif cuts and s - cuts[-1][0] <= COINCIDENCE_TOLERANCE:
                cuts[-1][1].append(n)
            else:
                cuts.append([s, [n]])
        if not cuts:
            edges.append(e)
            continue
        pieces = e.geometry.split([c[0] for c in cuts])
        chain = [e.a]
        for (_, members), piece in zip(cuts, pieces):
            nodes[next_id] = piece.end
            kinds[next_id] = NodeKind.SNAPPED
            for n in members:
                mapping[n] = next_id
            chain.append(next_id)
            next_id += 1
        chain.append(e.b)
        for (u, v), piece in zip(zip(chain, chain[1:]), pieces):
            edges.append(Edge(u, v, piece))
    return SnapResult(RoadGraph(nodes, edges, kinds), mapping, buffer, distances)


def _pair_contributions(controls: ControlNodeSet, snap: SnapResult):
    """Per-pair source lengths and contributions for all connected source pairs."""
    ids = sorted(controls.ids)
    source = controls.graph
    if len(ids) < 2:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool)
    src = source.distance_matrix(ids)[:, [source.row_of(n) for n in ids]]
    iu, ju = np.triu_indices(len(ids), k=1)
    src_len = src[iu, ju]
    keep = np.isfinite(src_len) & (src_len > 0)
    iu, ju, src_len = iu[keep], ju[keep], src_len[keep]

    mapped = [snap.mapping.get(n) for n in ids]
    targets = sorted({m for m in mapped if m is not None})
    tgt_len = np.full(len(src_len), np.inf)
    if targets:
        aug = snap.augmented
        tdist = aug.distance_matrix(targets)[:, [aug.row_of(m) for m in targets]]
        slot = {m: k for k, m in enumerate(targets)}
        mi = np.array([slot.get(m, -1) if m is not None else -1 for m in mapped])
        a_slot, b_slot = mi[iu], mi[ju]
        ok = (a_slot >= 0) & (b_slot >= 0)
        tgt_len[ok] = tdist[a_slot[ok], b_slot[ok]]
    missing = ~np.isfinite(tgt_len)
    contrib = np.ones(len(src_len))
    good = ~missing
    contrib[good] = np.minimum(1.0, np.abs(src_len[good] - tgt_len[good]) / src_len[good])
    return src_len, contrib, missing


def apls_one_direction(controls: ControlNodeSet, snap: SnapResult) -> DirectionScore:
    """Score the routes between ``controls`` against their snapped counterparts.

    With no routes in the source graph the score is 1.0 if the snap target is
    also empty and 0.0 otherwise.
    """
    _, contrib, missing = _pair_contributions(controls, snap)
    n = len(contrib)
    if n == 0:
        return DirectionScore(1.0 if snap.augmented.is_empty else 0.0, 0, 0)
    score = 1.0 - math.fsum(contrib.tolist()) / n
    return DirectionScore(min(1.0, max(0.0, score)), n, int(missing.sum()))


def apls(truth: RoadGraph, proposal: RoadGraph, buffer: float = DEFAULT_BUFFER,
         spacing: float = DEFAULT_MIDPOINT_SPACING, proposal_midpoints: bool = True) -> AplsScore:
    """Symmetric APLS of ``proposal`` against ``truth``.

    ``proposal_midpoints=False`` uses only the proposal's own endpoints and
    intersections as control nodes for the reverse direction.
    """
    truth_aug, truth_controls = inject_midpoints(truth, spacing)
    if proposal_midpoints:
        _, prop_controls = inject_midpoints(proposal, spacing)
    else:
        prop_controls = control_nodes(proposal)

    snap1 = snap_control_nodes(truth_controls, proposal, buffer)
    part1 = apls_one_direction(truth_controls, snap1)
    snap2 = snap_control_nodes(prop_controls, truth, buffer)
    part2 = apls_one_direction(prop_controls, snap2)
    return AplsScore(
        part1.score, part2.score, harmonic_mean(part1.score, part2.score),
        (part1.paths, part2.paths), (part1.missing, part2.missing),
    )


# ---------------------------------------------------------------------------
# challenge aggregation


@dataclass
class TileRoadScore:
    tile_id: str
    city: str
    score: AplsScore


@dataclass
class RoadReport:
    tiles: list
    cities: dict  # city -> mean tile score
    total: float


def score_road_tile(tile, buffer: float = DEFAULT_BUFFER,
                    spacing: float = DEFAULT_MIDPOINT_SPACING,
                    merge_tolerance: float = DEFAULT_MERGE_TOLERANCE,
                    proposal_midpoints: bool = True) -> TileRoadScore:
    truth = build_graph(tile.truth, merge_tolerance)
    proposal = build_graph(tile.proposal, merge_tolerance)
    score = apls(truth, proposal, buffer, spacing, proposal_midpoints)
    return TileRoadScore(tile.tile_id, tile.city, score)


def mean(values: Sequence[float]) -> float:
    values = list(values)
    if not values:
        raise ConfigurationError("mean of no values")
    return math.fsum(values) / len(values)


def aggregate_road_scores(rows: Sequence[TileRoadScore]) -> RoadReport:
    """City score = mean over its tiles; total = mean over cities."""
    rows = sorted(rows, key=lambda r: r.tile_id)
    by_city = defaultdict(list)
    for r in rows:
        by_city[r.city].append(r.score.total)
    cities = {c: mean(v) for c, v in sorted(by_city.items())}
    total = mean(cities.values()) if cities else 0.0
    return RoadReport(rows, cities, total)


def challenge_total(city_scores: Sequence[float]) -> float:
    """Arithmetic mean of per-city scores."""
    return mean(city_scores)


def score_road_challenge(tiles: Sequence, buffer: float = DEFAULT_BUFFER,
                         spacing: float = DEFAULT_MIDPOINT_SPACING,
                         merge_tolerance: float = DEFAULT_MERGE_TOLERANCE,
                         workers: int = 1) -> RoadReport:
    args = (buffer, spacing, merge_tolerance)
    if workers > 1 and len(tiles) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_score_tile_star, [(t,) + args for t in tiles],
                                 chunksize=max(1, len(tiles) // (4 * workers))))
    else:
        rows = [score_road_tile(t, *args) for t in tiles]
    return aggregate_road_scores(rows)


def _score_tile_star(packed):
    return score_road_tile(*packed)
