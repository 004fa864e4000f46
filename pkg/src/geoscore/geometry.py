"""Planar geometry kernel.

Everything downstream works in tile-local meters: GeoJSON lon/lat is pushed
through :func:`project_to_local` once at ingest and never seen again.

Polygon booleans are restricted to what the metrics need, namely the *area*
of an intersection.  That area is computed as a boundary integral over the
pieces of each polygon's boundary that lie inside the other one, which avoids
building the clipped polygon explicitly and degrades gracefully on shared or
touching edges.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import ExtentError, GeometryError

EARTH_RADIUS_M = 6_378_137.0
# maximum |dlon|, |dlat| (degrees) accepted by the local projection
MAX_PROJECTION_OFFSET_DEG = 1.0
# incidence tolerance, relative to the joint bounding box of two polygons
INCIDENCE_TOLERANCE = 1e-10


class Point2(NamedTuple):
    x: float
    y: float


class GeoPoint(NamedTuple):
    lon: float
    lat: float


class NearestPoint(NamedTuple):
    distance: float
    nearest: Point2
    segment_index: int
    param: float


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


# ---------------------------------------------------------------------------
# projection


def _check_geo(p: GeoPoint) -> None:
    if not _finite(p.lon, p.lat):
        raise GeometryError(f"non-finite coordinate {tuple(p)}")
    if not (-180.0 <= p.lon <= 180.0 and -90.0 <= p.lat <= 90.0):
        raise GeometryError(f"lon/lat out of range: {tuple(p)}")


def project_to_local(points: Sequence[GeoPoint], origin: GeoPoint) -> list[Point2]:
    """Equirectangular projection about ``origin``, returning meters east/north."""
    origin = GeoPoint(*origin)
    _check_geo(origin)
    kx = EARTH_RADIUS_M * math.cos(math.radians(origin.lat)) * math.pi / 180.0
    ky = EARTH_RADIUS_M * math.pi / 180.0
    out = []
    for p in points:
        p = GeoPoint(*p)
        _check_geo(p)
        dlon = p.lon - origin.lon
        dlat = p.lat - origin.lat
        if abs(dlon) > MAX_PROJECTION_OFFSET_DEG or abs(dlat) > MAX_PROJECTION_OFFSET_DEG:
            raise ExtentError(
                f"point {tuple(p)} is more than {MAX_PROJECTION_OFFSET_DEG} deg "
                f"from projection origin {tuple(origin)}"
            )
        out.append(Point2(kx * dlon, ky * dlat))
    return out


def unproject_to_geo(points: Sequence[Point2], origin: GeoPoint) -> list[GeoPoint]:
    """Inverse of :func:`project_to_local`."""
    origin = GeoPoint(*origin)
    _check_geo(origin)
    kx = EARTH_RADIUS_M * math.cos(math.radians(origin.lat)) * math.pi / 180.0
    ky = EARTH_RADIUS_M * math.pi / 180.0
    return [GeoPoint(origin.lon + p[0] / kx, origin.lat + p[1] / ky) for p in points]


# ---------------------------------------------------------------------------
# polylines


@dataclass(frozen=True)
class Polyline:
    vertices: tuple[Point2, ...]
    # cumulative arc length at each vertex
    _cumulative: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = tuple(Point2(float(v[0]), float(v[1])) for v in self.vertices)
        if len(verts) < 2:
            raise GeometryError("polyline needs at least 2 vertices")
        for v in verts:
            if not _finite(*v):
                raise GeometryError(f"non-finite vertex {tuple(v)}")
        cum = [0.0]
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise GeometryError(f"repeated consecutive vertex {tuple(a)}")
            cum.append(cum[-1] + math.hypot(b.x - a.x, b.y - a.y))
        if cum[-1] <= 0.0:
            raise GeometryError("polyline has zero length")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "_cumulative", tuple(cum))

    @property
    def length(self) -> float:
        return self._cumulative[-1]

    @property
    def start(self) -> Point2:
        return self.vertices[0]

    @property
    def end(self) -> Point2:
        return self.vertices[-1]

    def reversed(self) -> "Polyline":
        return Polyline(self.vertices[::-1])

    def interpolate(self, distance: float) -> tuple[Point2, int]:
        """Point at arc length ``distance`` and the index of the segment holding it."""
        cum = self._cumulative
        if distance <= 0.0:
            return self.vertices[0], 0
        if distance >= cum[-1]:
            return self.vertices[-1], len(self.vertices) - 2
        i = bisect.bisect_right(cum, distance) - 1
        a, b = self.vertices[i], self.vertices[i + 1]
        t = (distance - cum[i]) / (cum[i + 1] - cum[i])
        return Point2(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)), i

    def split(self, distances: Sequence[float]) -> list["Polyline"]:
        """Cut at the given arc lengths (strictly inside, increasing).

        Returns ``len(distances) + 1`` pieces whose shared endpoints are the
        interpolated cut points.
        """
        pieces = []
        cum = self._cumulative
        verts = self.vertices
        current = [verts[0]]
        vi = 1
        for d in distances:
            if not 0.0 < d < cum[-1]:
                raise GeometryError(f"cut at {d} outside (0, {cum[-1]})")
            cut, _ = self.interpolate(d)
            while vi < len(verts) - 1 and cum[vi] < d:
                if verts[vi] != current[-1]:
                    current.append(verts[vi])
                vi += 1
            if cut != current[-1]:
                current.append(cut)
            pieces.append(Polyline(tuple(current)))
            current = [cut]
        for v in verts[vi:]:
            if v != current[-1]:
                current.append(v)
        pieces.append(Polyline(tuple(current)))
        return pieces


def polyline_length(line: Polyline) -> float:
    return line.length


def _nearest_on_segment(p: Point2, a: Point2, b: Point2) -> tuple[float, Point2, float]:
    dx, dy = b.x - a.x, b.y - a.y
    seg2 = dx * dx + dy * dy
    t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / seg2 if seg2 > 0 else 0.0
    t = min(1.0, max(0.0, t))
    q = Point2(a.x + t * dx, a.y + t * dy)
    return math.hypot(p.x - q.x, p.y - q.y), q, t


def point_to_polyline(point: Point2, line: Polyline) -> NearestPoint:
    """Closest point on ``line``; ties go to the lowest segment index."""
    point = Point2(*point)
    best = None
    verts = line.vertices
    for i in range(len(verts) - 1):
        d, q, t = _nearest_on_segment(point, verts[i], verts[i + 1])
        if best is None or d < best.distance:
            best = NearestPoint(d, q, i, t)
    return best


# ---------------------------------------------------------------------------
# polygons


def _signed_area(ring: Sequence[Point2]) -> float:
    s = 0.0
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * s


def _cross(ox, oy, ax, ay, bx, by) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def _on_segment(px, py, ax, ay, bx, by) -> bool:
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def _segments_touch(p1, p2, q1, q2) -> bool:
    d1 = _cross(*q1, *q2, *p1)
    d2 = _cross(*q1, *q2, *p2)
    d3 = _cross(*p1, *p2, *q1)
    d4 = _cross(*p1, *p2, *q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True
    if d1 == 0 and _on_segment(*p1, *q1, *q2):
        return True
    if d2 == 0 and _on_segment(*p2, *q1, *q2):
        return True
    if d3 == 0 and _on_segment(*q1, *p1, *p2):
        return True
    if d4 == 0 and _on_segment(*q2, *p1, *p2):
        return True
    return False


def _ring_is_simple(ring: Sequence[Point2]) -> bool:
    n = len(ring)
    edges = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        a1, a2 = edges[i]
        for j in range(i + 1, n):
            b1, b2 = edges[j]
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges share one vertex; they must not fold back
                shared = a2 if j == i + 1 else a1
                other_a = a1 if j == i + 1 else a2
                other_b = b2 if j == i + 1 else b1
                if _cross(*shared, *other_a, *other_b) == 0:
                    ux, uy = other_a.x - shared.x, other_a.y - shared.y
                    vx, vy = other_b.x - shared.x, other_b.y - shared.y
                    if ux * vx + uy * vy > 0:
                        return False
                continue
            if _segments_touch(a1, a2, b1, b2):
                return False
    return True


def _normalize_ring(ring, ccw: bool, what: str) -> tuple[Point2, ...]:
    pts = [Point2(float(p[0]), float(p[1])) for p in ring]
    for p in pts:
        if not _finite(*p):
            raise GeometryError(f"non-finite vertex {tuple(p)} in {what}")
    if len(pts) > 1 and pts[0] == pts[-1]:
        pts.pop()
    dedup = []
    for p in pts:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(dedup) > 1 and dedup[0] == dedup[-1]:
        dedup.pop()
    if len(set(dedup)) < 3:
        raise GeometryError(f"{what} needs at least 3 distinct vertices")
    area = _signed_area(dedup)
    if area == 0.0:
        raise GeometryError(f"{what} has zero area")
    if (area > 0) != ccw:
        dedup.reverse()
    return tuple(dedup)


def _point_in_ring(x: float, y: float, ring: Sequence[Point2]) -> bool:
    inside = False
    n = len(ring)
    j = n - 1
    for i in range(n):
        xi, yi = ring[i]
        xj, yj = ring[j]
        if (yi > y) != (yj > y):
            xcross = xi + (y - yi) * (xj - xi) / (yj - yi)
            if x < xcross:
                inside = not inside
        j = i
    return inside


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with optional holes.

    Rings are stored open (no repeated closing vertex), the exterior
    counter-clockwise and holes clockwise so the interior is always on the
    left of every directed edge.
    """

    exterior: tuple[Point2, ...]
    holes: tuple[tuple[Point2, ...], ...] = ()

    def __post_init__(self):
        ext = _normalize_ring(self.exterior, True, "exterior ring")
        if not _ring_is_simple(ext):
            raise GeometryError("exterior ring is self-intersecting")
        holes = tuple(_normalize_ring(h, False, f"hole {i}") for i, h in enumerate(self.holes))
        for i, h in enumerate(holes):
            if not _ring_is_simple(h):
                raise GeometryError(f"hole {i} is self-intersecting")
            for p in h:
                if not (_point_in_ring(p.x, p.y, ext) or _on_ring(p, ext)):
                    raise GeometryError(f"hole {i} is not inside the exterior ring")
            if _rings_cross(h, ext):
                raise GeometryError(f"hole {i} crosses the exterior ring")
        for i in range(len(holes)):
            for j in range(i + 1, len(holes)):
                if _rings_cross(holes[i], holes[j]) or _point_in_ring(*holes[j][0], holes[i]) \
                        or _point_in_ring(*holes[i][0], holes[j]):
                    raise GeometryError(f"holes {i} and {j} overlap")
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", holes)

    def rings(self):
        yield self.exterior
        yield from self.holes

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p.x for p in self.exterior]
        ys = [p.y for p in self.exterior]
        return min(xs), min(ys), max(xs), max(ys)

    def scaled(self, s: float) -> "Polygon":
        return Polygon(
            tuple(Point2(p.x * s, p.y * s) for p in self.exterior),
            tuple(tuple(Point2(p.x * s, p.y * s) for p in h) for h in self.holes),
        )

    def translated(self, dx: float, dy: float) -> "Polygon":
        return Polygon(
            tuple(Point2(p.x + dx, p.y + dy) for p in self.exterior),
            tuple(tuple(Point2(p.x + dx, p.y + dy) for p in h) for h in self.holes),
        )


def _on_ring(p: Point2, ring: Sequence[Point2]) -> bool:
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        if _cross(*a, *b, *p) == 0 and _on_segment(*p, *a, *b):
            return True
    return False


def _rings_cross(r1, r2) -> bool:
    """True when edges of the two rings properly cross (touching is allowed)."""
    n, m = len(r1), len(r2)
    for i in range(n):
        a1, a2 = r1[i], r1[(i + 1) % n]
        for j in range(m):
            b1, b2 = r2[j], r2[(j + 1) % m]
            d1 = _cross(*b1, *b2, *a1)
            d2 = _cross(*b1, *b2, *a2)
            d3 = _cross(*a1, *a2, *b1)
            d4 = _cross(*a1, *a2, *b2)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return True
    return False


def polygon_area(p: Polygon) -> float:
    return _signed_area(p.exterior) + sum(_signed_area(h) for h in p.holes)


def bounds_overlap(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


# ---------------------------------------------------------------------------
# intersection area

_INSIDE, _OUTSIDE, _BOUNDARY = 0, 1, 2


def _prepared_edges(poly: Polygon, ox: float, oy: float):
    # shifted to a common local origin to keep cross products well conditioned
    edges = []
    for ring in poly.rings():
        pts = [(p.x - ox, p.y - oy) for p in ring]
        n = len(pts)
        for i in range(n):
            a, b = pts[i], pts[(i + 1) % n]
            if a != b:
                edges.append((a[0], a[1], b[0], b[1]))
    return edges


def _classify(px, py, edges, eps) -> tuple[int, tuple[float, float] | None]:
    """Locate a point against a polygon given by its directed edges."""
    inside = False
    for ax, ay, bx, by in edges:
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        t = ((px - ax) * dx + (py - ay) * dy) / seg2
        if -1e-12 <= t <= 1 + 1e-12:
            qx, qy = ax + t * dx, ay + t * dy
            if math.hypot(px - qx, py - qy) <= eps:
                return _BOUNDARY, (dx, dy)
        if (ay > py) != (by > py):
            xcross = ax + (py - ay) * dx / dy
            if px < xcross:
                inside = not inside
    return (_INSIDE if inside else _OUTSIDE), None


def _cut_params(ax, ay, bx, by, other_edges, eps) -> list[float]:
    dx, dy = bx - ax, by - ay
    dd = dx * dx + dy * dy
    length = math.sqrt(dd)
    ts = [0.0, 1.0]
    tol = eps / length
    for rx, ry, sx, sy in other_edges:
        if max(rx, sx) < min(ax, bx) - eps or min(rx, sx) > max(ax, bx) + eps \
                or max(ry, sy) < min(ay, by) - eps or min(ry, sy) > max(ay, by) + eps:
            continue
        ex, ey = sx - rx, sy - ry
        denom = dx * ey - dy * ex
        wx, wy = rx - ax, ry - ay
        elen = math.hypot(ex, ey)
        if abs(denom) > 1e-14 * length * elen:
            t = (wx * ey - wy * ex) / denom
            u = (wx * dy - wy * dx) / denom
            utol = eps / elen
            if -tol <= t <= 1 + tol and -utol <= u <= 1 + utol:
                ts.append(min(1.0, max(0.0, t)))
        else:
            # parallel: only collinear overlaps matter
            if abs(wx * dy - wy * dx) / length > eps:
                continue
            for px, py in ((rx, ry), (sx, sy)):
                t = ((px - ax) * dx + (py - ay) * dy) / dd
                if -tol <= t <= 1 + tol:
                    ts.append(min(1.0, max(0.0, t)))
    ts.sort()
    return ts


def _boundary_integral(edges, other_edges, eps, keep_shared: bool) -> float:
    total = 0.0
    for ax, ay, bx, by in edges:
        ts = _cut_params(ax, ay, bx, by, other_edges, eps)
        dx, dy = bx - ax, by - ay
        for t0, t1 in zip(ts, ts[1:]):
            if t1 - t0 <= 0.0:
                continue
            x0, y0 = ax + t0 * dx, ay + t0 * dy
            x1, y1 = ax + t1 * dx, ay + t1 * dy
            state, direction = _classify(0.5 * (x0 + x1), 0.5 * (y0 + y1), other_edges, eps)
            if state == _INSIDE:
                total += x0 * y1 - x1 * y0
            elif state == _BOUNDARY and keep_shared:
                if direction[0] * dx + direction[1] * dy > 0:
                    total += x0 * y1 - x1 * y0
    return total


def _ring_key(p: Polygon):
    return (p.exterior, p.holes)


def polygon_intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of ``a ∩ b``.

    The result is exactly commutative: operands are put in a canonical order
    before integration.
    """
    for poly in (a, b):
        for ring in poly.rings():
            for p in ring:
                if not _finite(*p):
                    raise GeometryError(f"non-finite vertex {tuple(p)}")
    ba, bb = a.bounds, b.bounds
    if not bounds_overlap(ba, bb):
        return 0.0
    if _ring_key(b) < _ring_key(a):
        a, b = b, a
        ba, bb = bb, ba
    ox = min(ba[0], bb[0])
    oy = min(ba[1], bb[1])
    size = max(ba[2], bb[2]) - ox + max(ba[3], bb[3]) - oy
    eps = INCIDENCE_TOLERANCE * size
    ea = _prepared_edges(a, ox, oy)
    eb = _prepared_edges(b, ox, oy)
    twice = _boundary_integral(ea, eb, eps, True) + _boundary_integral(eb, ea, eps, False)
    area = 0.5 * twice
    return min(max(area, 0.0), polygon_area(a), polygon_area(b))


def iou(a: Polygon, b: Polygon) -> float:
    """Intersection over union of two polygons."""
    area_a = polygon_area(a)
    area_b = polygon_area(b)
    if area_a <= 0.0 and area_b <= 0.0:
        raise GeometryError("IoU undefined for two zero-area polygons")
    inter = polygon_intersection_area(a, b)
    union = area_a + area_b - inter
    return min(1.0, max(0.0, inter / union))
