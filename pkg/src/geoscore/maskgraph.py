"""Raster side of the road pipeline.

Centerlines are burned into binary masks, masks are cleaned up with
morphology, thinned to a one-pixel skeleton, and the skeleton is traced back
into a :class:`~geoscore.roadgraph.RoadGraph`.  Pixel-level IoU / F1 /
relaxed F1 live here too, for comparing masks directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.morphology import skeletonize as _thin

from .errors import ConfigurationError, GeometryError, ParseError
from .geometry import GeoPoint, Point2, Polyline
from .roadgraph import Edge, RoadGraph

DEFAULT_HALFWIDTH = 2.0
DEFAULT_PIXEL_SIZE = 0.5
DEFAULT_RELAX_RADIUS = 3
DEFAULT_PRUNE_PX = 4
DEFAULT_SIMPLIFY_PX = 1.0

_EIGHT = np.ones((3, 3), dtype=bool)
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class GeoTransform:
    """Pixel <-> meter mapping; ``origin`` is the top-left corner of pixel (0, 0)."""

    origin: Point2
    pixel_size: float

    def __post_init__(self):
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise ConfigurationError(f"pixel size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "origin", Point2(*self.origin))

    def pixel_center(self, row: float, col: float) -> Point2:
        return Point2(self.origin.x + (col + 0.5) * self.pixel_size,
                      self.origin.y - (row + 0.5) * self.pixel_size)

    def to_pixel(self, p: Point2) -> tuple[float, float]:
        """Fractional (row, col) of a point, pixel centres at integer + 0.5 offsets removed."""
        return ((self.origin.y - p[1]) / self.pixel_size - 0.5,
                (p[0] - self.origin.x) / self.pixel_size - 0.5)


@dataclass(frozen=True)
class RasterMask:
    data: np.ndarray  # bool, shape (height, width)
    transform: GeoTransform

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise ConfigurationError(f"mask must be a non-empty 2-D grid, got shape {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def pixel_size(self) -> float:
        return self.transform.pixel_size


class PixelScores(NamedTuple):
    iou: float
    f1: float
    relaxed_f1: float


def _lines(roads) -> Iterable[Polyline]:
    if isinstance(roads, RoadGraph):
        roads = roads.edges
    for r in roads:
        yield r if isinstance(r, Polyline) else r.geometry


def render_road_mask(roads, extent, pixel_size: float = DEFAULT_PIXEL_SIZE,
                     halfwidth: float = DEFAULT_HALFWIDTH) -> RasterMask:
    """Burn centerlines into a mask: a pixel is set iff its centre is within ``halfwidth``.

    ``extent`` is ``(min_x, min_y, max_x, max_y)`` in meters.
    """
    min_x, min_y, max_x, max_y = map(float, extent)
    if not (max_x > min_x and max_y > min_y) or not all(map(math.isfinite, extent)):
        raise GeometryError(f"degenerate extent {extent}")
    if halfwidth < 0:
        raise ConfigurationError(f"halfwidth must be >= 0, got {halfwidth}")
    transform = GeoTransform(Point2(min_x, max_y), pixel_size)
    width = max(1, math.ceil((max_x - min_x) / pixel_size - 1e-9))
    height = max(1, math.ceil((max_y - min_y) / pixel_size - 1e-9))
    data = np.zeros((height, width), dtype=bool)
    pad = halfwidth / pixel_size + 1
    for line in _lines(roads):
        for a, b in zip(line.vertices, line.vertices[1:]):
            ra, ca = transform.to_pixel(a)
            rb, cb = transform.to_pixel(b)
            r0 = max(0, math.floor(min(ra, rb) - pad))
            r1 = min(height, math.ceil(max(ra, rb) + pad) + 1)
            c0 = max(0, math.floor(min(ca, cb) - pad))
            c1 = min(width, math.ceil(max(ca, cb) + pad) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            ys = transform.origin.y - (np.arange(r0, r1) + 0.5) * pixel_size
            xs = transform.origin.x + (np.arange(c0, c1) + 0.5) * pixel_size
            px, py = np.meshgrid(xs, ys)
            dx, dy = b.x - a.x, b.y - a.y
            t = np.clip(((px - a.x) * dx + (py - a.y) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
            d = np.hypot(px - (a.x + t * dx), py - (a.y + t * dy))
            data[r0:r1, c0:c1] |= d <= halfwidth
    return RasterMask(data, transform)


def disk(radius: int) -> np.ndarray:
    """Digital disk; the half-pixel margin makes radius 1 the full 3x3 block."""
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= (r + 0.5) ** 2


def binary_open(data: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return data.copy()
    r = int(radius)
    padded = np.pad(data, r, mode="edge")
    out = ndimage.binary_dilation(ndimage.binary_erosion(padded, disk(r)), disk(r))
    return out[r:-r, r:-r]


def binary_close(data: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return data.copy()
    r = int(radius)
    padded = np.pad(data, 2 * r, mode="edge")
    out = ndimage.binary_erosion(ndimage.binary_dilation(padded, disk(r)), disk(r))
    return out[2 * r:-2 * r, 2 * r:-2 * r]


def refine_mask(mask, threshold: float = 0.5, open_radius: int = 0, close_radius: int = 0,
                transform: GeoTransform | None = None) -> RasterMask:
    """Binarize at ``threshold`` (value >= threshold), then open, then close.

    ``mask`` is a :class:`RasterMask` or a probability grid with values in
    [0, 1]; a bare grid needs ``transform``.
    """
    if isinstance(mask, RasterMask):
        values, transform = mask.data, mask.transform
    else:
        if transform is None:
            raise ConfigurationError("a bare grid needs a GeoTransform")
        values = np.asarray(mask)
    if values.dtype == bool:
        binary = values.copy()
    else:
        binary = values.astype(float) >= threshold
    binary = binary_open(binary, open_radius)
    binary = binary_close(binary, close_radius)
    return RasterMask(binary, transform)


def skeletonize(mask: RasterMask) -> RasterMask:
    """One-pixel-wide, connectivity-preserving skeleton (two-subiteration thinning)."""
    data = np.asarray(mask.data, dtype=bool)
    if not data.any():
        return RasterMask(np.zeros_like(data), mask.transform)
    return RasterMask(_thin(data), mask.transform)


# ---------------------------------------------------------------------------
# skeleton -> graph


def _neighbor_count(sk: np.ndarray) -> np.ndarray:
    counts = ndimage.convolve(sk.astype(np.int32), _EIGHT.astype(np.int32), mode="constant")
    return np.where(sk, counts - 1, 0)


def _simplify(points: list, tolerance: float) -> list:
    """Douglas-Peucker on (row, col) tuples; endpoints are always kept."""
    if tolerance <= 0 or len(points) < 3:
        return points
    pts = np.asarray(points, dtype=float)
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = pts[i], pts[j]
        seg = b - a
        norm = math.hypot(*seg)
        mid = pts[i + 1:j]
        if norm == 0:
            d = np.hypot(*(mid - a).T)
        else:
            d = np.abs(seg[0] * (mid[:, 1] - a[1]) - seg[1] * (mid[:, 0] - a[0])) / norm
        k = int(np.argmax(d))
        if d[k] > tolerance:
            keep[i + 1 + k] = True
            stack.append((i, i + 1 + k))
            stack.append((i + 1 + k, j))
    return [p for p, flag in zip(points, keep) if flag]


def skeleton_to_graph(skeleton: RasterMask, transform: GeoTransform | None = None,
                      prune_px: float = DEFAULT_PRUNE_PX,
                      simplify_px: float = DEFAULT_SIMPLIFY_PX) -> RoadGraph:
    """Trace a one-pixel skeleton into a road graph.

    Pixels with one neighbour (ends) or three or more (junctions) are node
    pixels; 8-connected clusters of node pixels collapse to one node at their
    centroid.  Chains of two-neighbour pixels between nodes become edges.
    Closed loops without any node pixel get a node at their first pixel in
    row-major order.  Dead-end edges shorter than ``prune_px`` are dropped.
    """
    transform = transform or skeleton.transform
    sk = np.asarray(skeleton.data, dtype=bool)
    h, w = sk.shape
    nbr = _neighbor_count(sk)
    node_px = sk & (nbr != 2)
    labels, n_clusters = ndimage.label(node_px, structure=_EIGHT)
    centroids = ndimage.center_of_mass(node_px, labels, range(1, n_clusters + 1)) if n_clusters else []
    centroids = [tuple(map(float, c)) for c in centroids]

    visited = np.zeros_like(sk)
    traces = []  # (node label a, node label b, [(row, col), ...])

    def neighbors(r, c):
        for dr, dc in _OFFSETS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and sk[rr, cc]:
                yield rr, cc

    def walk(prev, cur):
        # cur has exactly two neighbours: prev and the next pixel of the chain
        path = [cur]
        visited[cur] = True
        while True:
            step = None
            for q in neighbors(*cur):
                if q == prev:
                    continue
                if labels[q]:
                    return labels[q], path
                if not visited[q]:
                    step = q
            if step is None:
                return None, path
            visited[step] = True
            path.append(step)
            prev, cur = cur, step

    rows, cols = np.nonzero(node_px)
    for r, c in sorted(zip(rows.tolist(), cols.tolist())):
        lab = labels[r, c]
        for q in neighbors(r, c):
            if labels[q] or visited[q]:
                continue
            end, path = walk((r, c), q)
            if end is not None:
                traces.append((lab, end, path))

    # node-free loops
    loop_rows, loop_cols = np.nonzero(sk & ~visited & ~node_px)
    for r, c in sorted(zip(loop_rows.tolist(), loop_cols.tolist())):
        if visited[r, c]:
            continue
        n_clusters += 1
        lab = n_clusters
        labels[r, c] = lab
        centroids.append((float(r), float(c)))
        visited[r, c] = True
        for q in neighbors(r, c):
            if not visited[q]:
                _, path = walk((r, c), q)
                traces.append((lab, lab, path))
                break

    degree = {}
    for a, b, _ in traces:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1

    def trace_length(a, b, path):
        pts = [centroids[a - 1]] + [tuple(map(float, p)) for p in path] + [centroids[b - 1]]
        return sum(math.hypot(p[0] - q[0], p[1] - q[1]) for p, q in zip(pts, pts[1:])), pts

    kept = []
    for a, b, path in traces:
        length_px, pts = trace_length(a, b, path)
        dead_end = degree[a] == 1 or degree[b] == 1
        if (dead_end or a == b) and length_px < prune_px:
            continue
        kept.append((a, b, pts))

    nodes = {}
    edges = []
    for a, b, pts in kept:
        pts = _simplify(pts, simplify_px)
        coords = [transform.pixel_center(r, c) for r, c in pts]
        for lab in (a, b):
            if lab not in nodes:
                nodes[lab] = transform.pixel_center(*centroids[lab - 1])
        coords[0], coords[-1] = nodes[a], nodes[b]
        dedup = [coords[0]]
        for p in coords[1:]:
            if p != dedup[-1]:
                dedup.append(p)
        if len(dedup) < 2:
            continue
        try:
            edges.append(Edge(a, b, Polyline(tuple(dedup))))
        except GeometryError:
            continue
    used = {e.a for e in edges} | {e.b for e in edges}
    return RoadGraph({n: p for n, p in nodes.items() if n in used}, edges)


# ---------------------------------------------------------------------------
# pixel metrics


def _grid(mask) -> np.ndarray:
    return np.asarray(mask.data if isinstance(mask, RasterMask) else mask, dtype=bool)


def _ratio(num, den, empty):
    return num / den if den else empty


def pixel_metrics(truth, proposal, relax_radius: float = DEFAULT_RELAX_RADIUS) -> PixelScores:
    """Pixel IoU, pixel F1 and relaxed F1 (matches accepted within ``relax_radius`` pixels)."""
    t, p = _grid(truth), _grid(proposal)
    if t.shape != p.shape:
        raise ConfigurationError(f"mask shapes differ: {t.shape} vs {p.shape}")
    nt, np_ = int(t.sum()), int(p.sum())
    if nt == 0 and np_ == 0:
        return PixelScores(1.0, 1.0, 1.0)
    tp = int((t & p).sum())
    iou_value = tp / (nt + np_ - tp)
    f1 = _f1(_ratio(tp, np_, 0.0), _ratio(tp, nt, 0.0))
    if nt == 0 or np_ == 0:
        return PixelScores(iou_value, f1, 0.0)
    dist_to_truth = ndimage.distance_transform_edt(~t)
    dist_to_prop = ndimage.distance_transform_edt(~p)
    r_precision = float((dist_to_truth[p] <= relax_radius).mean())
    r_recall = float((dist_to_prop[t] <= relax_radius).mean())
    return PixelScores(iou_value, f1, _f1(r_precision, r_recall))


def _f1(precision, recall):
    if precision + recall <= 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# PNG + sidecar I/O


def sidecar_path(png_path) -> Path:
    png_path = Path(png_path)
    return png_path.with_name(png_path.stem + ".geotransform.json")


def write_mask(mask: RasterMask, png_path, geo_origin: GeoPoint | None = None) -> Path:
    """Write an 8-bit single-channel PNG (0/255) plus its geotransform sidecar."""
    png_path = Path(png_path)
    data = np.asarray(mask.data)
    if data.dtype == bool:
        img = data.astype(np.uint8) * 255
    else:
        img = np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(png_path)
    meta = {
        "origin_x": mask.transform.origin.x,
        "origin_y": mask.transform.origin.y,
        "pixel_size": mask.transform.pixel_size,
    }
    if geo_origin is not None:
        meta["geo_origin_lon"] = geo_origin.lon
        meta["geo_origin_lat"] = geo_origin.lat
    sidecar_path(png_path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return png_path


def read_mask(png_path, threshold: float | None = 0.5):
    """Load a PNG mask and its sidecar.

    Returns ``(mask, geo_origin)``.  With ``threshold=None`` the mask data is
    the raw grey level scaled to [0, 1] instead of a binary grid.
    """
    png_path = Path(png_path)
    side = sidecar_path(png_path)
    try:
        meta = json.loads(side.read_text())
        transform = GeoTransform(Point2(float(meta["origin_x"]), float(meta["origin_y"])),
                                 float(meta["pixel_size"]))
    except FileNotFoundError:
        raise ParseError("missing geotransform sidecar", source=side) from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad geotransform sidecar: {exc}", source=side) from None
    try:
        with Image.open(png_path) as img:
            values = np.asarray(img.convert("L"), dtype=float) / 255.0
    except OSError as exc:
        raise ParseError(f"unreadable image: {exc}", source=png_path) from None
    data = values if threshold is None else values >= threshold
    geo = None
    if "geo_origin_lon" in meta and "geo_origin_lat" in meta:
        geo = GeoPoint(float(meta["geo_origin_lon"]), float(meta["geo_origin_lat"]))
    return RasterMask(data, transform), geo
