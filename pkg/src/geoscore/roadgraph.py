"""Spatial road graphs built from centerline polylines.

Nodes carry tile-local coordinates; every edge keeps its full polyline so
that path lengths are physical lengths, not hop counts.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ConfigurationError, GeometryError, NodeLookupError
from .geometry import GeoPoint, Point2, Polyline, unproject_to_geo

log = logging.getLogger(__name__)

DEFAULT_MERGE_TOLERANCE = 0.5
DEFAULT_MIDPOINT_SPACING = 50.0
COINCIDENCE_TOLERANCE = 1e-6
_EXACT = 1e-9


class NodeKind(str, Enum):
    ENDPOINT = "endpoint"
    INTERSECTION = "intersection"
    MIDPOINT = "midpoint"
    SNAPPED = "snapped"


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    geometry: Polyline

    @property
    def length(self) -> float:
        return self.geometry.length


class RoadGraph:
    """Immutable undirected graph; parallel edges are allowed."""

    def __init__(self, nodes: Mapping[int, Point2], edges: Iterable[Edge],
                 kinds: Mapping[int, NodeKind] | None = None):
        self.nodes = {int(k): Point2(*v) for k, v in nodes.items()}
        self.edges = tuple(edges)
        for e in self.edges:
            for nid, end in ((e.a, e.geometry.start), (e.b, e.geometry.end)):
                if nid not in self.nodes:
                    raise GeometryError(f"edge references unknown node {nid}")
                p = self.nodes[nid]
                if math.hypot(p.x - end.x, p.y - end.y) > COINCIDENCE_TOLERANCE:
                    raise GeometryError(f"edge endpoint {tuple(end)} is not at node {nid} {tuple(p)}")
        kinds = dict(kinds or {})
        degree = self.degrees()
        self.node_kind = {
            n: kinds.get(n) or (NodeKind.ENDPOINT if degree[n] <= 1 else NodeKind.INTERSECTION)
            for n in self.nodes
        }
        self._matrix = None
        self._row = None
        self._adjacency = None

    def degrees(self) -> dict[int, int]:
        deg = {n: 0 for n in self.nodes}
        for e in self.edges:
            deg[e.a] += 1
            deg[e.b] += 1
        return deg

    @property
    def is_empty(self) -> bool:
        return not self.edges

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def total_length(self) -> float:
        return math.fsum(e.length for e in self.edges)

    def __repr__(self):
        return f"RoadGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"

    def without_edges(self, drop: Iterable[int]) -> "RoadGraph":
        """Copy with the edges at the given positions removed (nodes are kept)."""
        drop = set(drop)
        kept = [e for i, e in enumerate(self.edges) if i not in drop]
        return RoadGraph(self.nodes, kept, self.node_kind)

    def translated(self, dx: float, dy: float) -> "RoadGraph":
        nodes = {n: Point2(p.x + dx, p.y + dy) for n, p in self.nodes.items()}
        edges = [Edge(e.a, e.b, Polyline(tuple(Point2(v.x + dx, v.y + dy)
                                                for v in e.geometry.vertices)))
                 for e in self.edges]
        return RoadGraph(nodes, edges, self.node_kind)

    # -- path machinery -----------------------------------------------------

    def _ensure_matrix(self):
        if self._matrix is not None:
            return
        ids = self.node_ids
        self._row = {n: i for i, n in enumerate(ids)}
        best = {}
        for e in self.edges:
            if e.a == e.b:
                continue
            i, j = self._row[e.a], self._row[e.b]
            key = (min(i, j), max(i, j))
            if key not in best or e.length < best[key]:
                best[key] = e.length
        n = len(ids)
        if best:
            rows, cols = zip(*best)
            self._matrix = csr_matrix((list(best.values()), (rows, cols)), shape=(n, n))
        else:
            self._matrix = csr_matrix((n, n))

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        if self._adjacency is None:
            adj = defaultdict(list)
            for e in self.edges:
                if e.a == e.b:
                    continue
                adj[e.a].append((e.b, e.length))
                adj[e.b].append((e.a, e.length))
            self._adjacency = {n: adj.get(n, []) for n in self.nodes}
        return self._adjacency

    def row_of(self, node: int) -> int:
        self._ensure_matrix()
        try:
            return self._row[node]
        except KeyError:
            raise NodeLookupError(node) from None

    def distance_matrix(self, sources: Sequence[int]) -> np.ndarray:
        """Shortest path lengths from each source to every node (columns in ``node_ids`` order).

        Unreachable entries are ``inf``.
        """
        self._ensure_matrix()
        rows = [self.row_of(s) for s in sources]
        if not rows:
            return np.zeros((0, len(self.nodes)))
        return np.atleast_2d(dijkstra(self._matrix, directed=False, indices=rows))


@dataclass(frozen=True)
class ControlNodeSet:
    graph: RoadGraph
    ids: tuple[int, ...]

    def __post_init__(self):
        missing = [n for n in self.ids if n not in self.graph.nodes]
        if missing:
            raise NodeLookupError(f"control nodes not in graph: {missing[:5]}")

    def __len__(self):
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


def control_nodes(graph: RoadGraph) -> ControlNodeSet:
    """All nodes of ``graph``: endpoints, intersections and injected midpoints."""
    return ControlNodeSet(graph, tuple(graph.node_ids))


# ---------------------------------------------------------------------------
# construction


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[max(ri, rj)] = min(ri, rj)


def _as_polyline(segment) -> Polyline:
    geom = getattr(segment, "geometry", segment)
    if isinstance(geom, Polyline):
        return geom
    return Polyline(tuple(geom))


def _canonical_edge(a, b, verts):
    if a > b or (a == b and verts[::-1] < verts):
        return b, a, verts[::-1]
    return a, b, verts


def build_graph(segments: Sequence, merge_tolerance: float = DEFAULT_MERGE_TOLERANCE) -> RoadGraph:
    """Build a road graph from centerlines (records or bare polylines).

    Connectivity comes only from shared points.  Endpoints within
    ``merge_tolerance`` of another segment's vertex, or of each other, are
    merged into one node.  Interior vertices become nodes only when they are
    exactly shared by another segment, so two roads that merely cross (an
    overpass) stay disconnected.  Node ids follow coordinate order, which
    makes the result independent of segment order.
    """
    if merge_tolerance < 0:
        raise ConfigurationError(f"merge tolerance must be >= 0, got {merge_tolerance}")
    lines = []
    for i, seg in enumerate(segments):
        try:
            lines.append(_as_polyline(seg))
        except GeometryError as exc:
            log.warning("segment %d skipped: %s", i, exc)
    verts = []  # (line index, vertex index, point, is_endpoint)
    for li, line in enumerate(lines):
        last = len(line.vertices) - 1
        for vi, p in enumerate(line.vertices):
            verts.append((li, vi, p, vi == 0 or vi == last))

    uf = _UnionFind(len(verts))
    radius = max(merge_tolerance, _EXACT)
    cell = radius * 2.0
    grid = defaultdict(list)
    for k, (_, _, p, _) in enumerate(verts):
        grid[(math.floor(p.x / cell), math.floor(p.y / cell))].append(k)
    for (gx, gy), members in grid.items():
        near = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                near.extend(grid.get((gx + dx, gy + dy), ()))
        for k in members:
            lk, _, pk, ek = verts[k]
            for m in near:
                if m <= k:
                    continue
                lm, _, pm, em = verts[m]
                d = math.hypot(pk.x - pm.x, pk.y - pm.y)
                if d <= _EXACT:
                    uf.union(k, m)
                elif d <= merge_tolerance and (ek or em) and (lk != lm or (ek and em)):
                    uf.union(k, m)

    clusters = defaultdict(list)
    for k in range(len(verts)):
        clusters[uf.find(k)].append(k)
    node_root = {}
    positions = []
    for root, members in clusters.items():
        if len(members) > 1 or verts[members[0]][3]:
            pts = sorted(verts[k][2] for k in members)
            pos = Point2(math.fsum(p.x for p in pts) / len(pts), math.fsum(p.y for p in pts) / len(pts))
            positions.append((pos, root))
    positions.sort()
    node_id_of_root = {root: i for i, (_, root) in enumerate(positions)}
    nodes = {i: pos for i, (pos, _) in enumerate(positions)}
    for root, members in clusters.items():
        if root in node_id_of_root:
            for k in members:
                node_root[k] = node_id_of_root[root]

    edges = {}
    k = 0
    for li, line in enumerate(lines):
        n = len(line.vertices)
        ids = [node_root.get(k + vi) for vi in range(n)]
        k += n
        start = 0
        for vi in range(1, n):
            if ids[vi] is None:
                continue
            a, b = ids[start], ids[vi]
            pts = [nodes[a]] + list(line.vertices[start + 1:vi]) + [nodes[b]]
            dedup = [pts[0]]
            for p in pts[1:]:
                if p != dedup[-1]:
                    dedup.append(p)
            start = vi
            if len(dedup) < 2:
                log.warning("zero-length piece of segment %d skipped", li)
                continue
            try:
                geom = Polyline(tuple(dedup))
            except GeometryError as exc:
                log.warning("piece of segment %d skipped: %s", li, exc)
                continue
            ca, cb, cverts = _canonical_edge(a, b, geom.vertices)
            edges[(ca, cb, cverts)] = Edge(ca, cb, Polyline(cverts))
    ordered = [edges[key] for key in sorted(edges)]
    used = {e.a for e in ordered} | {e.b for e in ordered}
    return RoadGraph({n: p for n, p in nodes.items() if n in used}, ordered)


def inject_midpoints(graph: RoadGraph, spacing: float = DEFAULT_MIDPOINT_SPACING
                     ) -> tuple[RoadGraph, ControlNodeSet]:
    """Split every edge longer than ``spacing`` into equal parts no longer than ``spacing``.

    An edge of length L becomes ceil(L / spacing) sub-edges, so a 100 m edge
    gains one node at 50 m and a 130 m edge gains two.
    """
    if not spacing > 0 or not math.isfinite(spacing):
        raise ConfigurationError(f"midpoint spacing must be positive, got {spacing}")
    nodes = dict(graph.nodes)
    kinds = dict(graph.node_kind)
    next_id = max(nodes, default=-1) + 1
    edges = []
    for e in graph.edges:
        k = math.ceil(e.length / spacing)
        if k <= 1:
            edges.append(e)
            continue
        cuts = [e.length * i / k for i in range(1, k)]
        pieces = e.geometry.split(cuts)
        chain = [e.a]
        for piece in pieces[:-1]:
            nodes[next_id] = piece.end
            kinds[next_id] = NodeKind.MIDPOINT
            chain.append(next_id)
            next_id += 1
        chain.append(e.b)
        for (u, v), piece in zip(zip(chain, chain[1:]), pieces):
            edges.append(Edge(u, v, piece))
    out = RoadGraph(nodes, edges, kinds)
    return out, control_nodes(out)


# ---------------------------------------------------------------------------
# shortest paths


def shortest_path_length(graph: RoadGraph, a: int, b: int) -> float | None:
    """Dijkstra distance between two nodes, or None when they are disconnected."""
    for n in (a, b):
        if n not in graph.nodes:
            raise NodeLookupError(n)
    if a == b:
        return 0.0
    adj = graph.adjacency()
    dist = {a: 0.0}
    heap = [(0.0, a)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == b:
            return d
        done.add(u)
        for v, w in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return None


def all_paths_from_sources(graph: RoadGraph, sources: ControlNodeSet | Sequence[int]
                           ) -> dict[tuple[int, int], float]:
    """Path lengths between every connected pair ``(a, b)``, ``a < b``, of the sources.

    Runs one Dijkstra per source.
    """
    ids = sorted(set(sources.ids if isinstance(sources, ControlNodeSet) else sources))
    if not ids:
        return {}
    dist = graph.distance_matrix(ids)
    cols = [graph.row_of(n) for n in ids]
    table = {}
    for i, a in enumerate(ids):
        row = dist[i]
        for j in range(i + 1, len(ids)):
            d = row[cols[j]]
            if math.isfinite(d):
                table[(a, ids[j])] = float(d)
    return table


# ---------------------------------------------------------------------------
# export


def graph_to_geojson(graph: RoadGraph, origin: GeoPoint | None = None) -> dict:
    """Nodes as Points (with kind) and edges as LineStrings.

    With ``origin`` the coordinates are converted back to lon/lat, otherwise
    they stay in local meters.
    """
    def conv(points):
        if origin is None:
            return [[p.x, p.y] for p in points]
        return [[g.lon, g.lat] for g in unproject_to_geo(points, origin)]

    features = []
    for n in graph.node_ids:
        features.append({
            "type": "Feature",
            "properties": {"node_id": n, "kind": graph.node_kind[n].value},
            "geometry": {"type": "Point", "coordinates": conv([graph.nodes[n]])[0]},
        })
    for i, e in enumerate(graph.edges):
        features.append({
            "type": "Feature",
            "properties": {"edge": i, "u": e.a, "v": e.b, "length_m": e.length},
            "geometry": {"type": "LineString", "coordinates": conv(e.geometry.vertices)},
        })
    return {"type": "FeatureCollection", "features": features}
