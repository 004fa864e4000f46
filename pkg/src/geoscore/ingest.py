"""GeoJSON ingest for building footprints and road centerlines.

Label files are FeatureCollections in WGS84 lon/lat.  Every record is
projected into tile-local meters on the way in (see
:func:`geoscore.geometry.project_to_local`).  Truth and proposal files of one
tile share the projection origin, which is the centre of the truth file's
bounding box.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, GeometryError, ParseError, ValidationError
from .geometry import (
    GeoPoint,
    Point2,
    Polygon,
    Polyline,
    project_to_local,
    unproject_to_geo,
)

log = logging.getLogger(__name__)

DEFAULT_TILE_PATTERN = r"(?P<city>AOI_\d+_[A-Za-z]+)_img(?P<img>\d+)"
GEOJSON_SUFFIXES = (".geojson", ".json")


class RoadType(IntEnum):
    MOTORWAY = 1
    PRIMARY = 2
    SECONDARY = 3
    TERTIARY = 4
    RESIDENTIAL = 5
    UNCLASSIFIED = 6
    CART_TRACK = 7


class Paved(IntEnum):
    PAVED = 1
    UNPAVED = 2
    UNKNOWN = 3


class BridgeType(IntEnum):
    BRIDGE = 1
    NOT_BRIDGE = 2
    UNKNOWN = 3


@dataclass(frozen=True)
class RoadSegmentRecord:
    geometry: Polyline
    road_id: int
    road_type: RoadType = RoadType.UNCLASSIFIED
    paved: Paved = Paved.UNKNOWN
    bridge_type: BridgeType = BridgeType.UNKNOWN
    lane_number: int = 1

    def __post_init__(self):
        if self.lane_number < 1:
            raise ValidationError(f"lane_number must be positive, got {self.lane_number}")


@dataclass(frozen=True)
class BuildingRecord:
    building_id: int
    footprint: Polygon


@dataclass
class TileSet:
    tile_id: str
    truth: list = field(default_factory=list)
    proposal: list = field(default_factory=list)
    origin: GeoPoint = GeoPoint(0.0, 0.0)
    city: str = ""


@dataclass(frozen=True)
class TilePaths:
    tile_id: str
    city: str
    truth: Path
    proposal: Path | None


# ---------------------------------------------------------------------------
# enum decoding

_ROAD_TYPE_NAMES = {
    "motorway": RoadType.MOTORWAY,
    "primary": RoadType.PRIMARY,
    "secondary": RoadType.SECONDARY,
    "tertiary": RoadType.TERTIARY,
    "residential": RoadType.RESIDENTIAL,
    "unclassified": RoadType.UNCLASSIFIED,
    "carttrack": RoadType.CART_TRACK,
    "track": RoadType.CART_TRACK,
}
_PAVED_NAMES = {"paved": Paved.PAVED, "unpaved": Paved.UNPAVED, "unknown": Paved.UNKNOWN}
_BRIDGE_NAMES = {
    "bridge": BridgeType.BRIDGE,
    "notbridge": BridgeType.NOT_BRIDGE,
    "notabridge": BridgeType.NOT_BRIDGE,
    "nobridge": BridgeType.NOT_BRIDGE,
    "unknown": BridgeType.UNKNOWN,
}

_ATTRIBUTE_DEFAULTS = {
    "road_type": RoadType.UNCLASSIFIED,
    "paved": Paved.UNKNOWN,
    "bridge_type": BridgeType.UNKNOWN,
    "lane_number": 1,
}


def _decode_enum(value, enum_cls, names):
    if isinstance(value, bool):
        raise ValueError(f"boolean is not a valid {enum_cls.__name__}")
    if isinstance(value, (int, float)):
        if not math.isfinite(value) or float(value) != int(value):
            raise ValueError(f"{value!r} is not an integer code")
        return enum_cls(int(value))
    if isinstance(value, str):
        key = re.sub(r"[^a-z0-9]", "", value.lower())
        if key.isdigit():
            return enum_cls(int(key))
        if key in names:
            return names[key]
    raise ValueError(f"{value!r} is not a valid {enum_cls.__name__}")


def _decode_positive_int(value) -> int:
    if isinstance(value, bool):
        raise ValueError("boolean is not an integer")
    if isinstance(value, str):
        value = value.strip()
        if not value.lstrip("-").isdigit():
            raise ValueError(f"{value!r} is not an integer")
        value = int(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f"{value!r} is not an integer")
        value = int(value)
    if not isinstance(value, int) or value < 1:
        raise ValueError(f"{value!r} is not a positive integer")
    return value


# ---------------------------------------------------------------------------
# document level


def load_feature_collection(document, source=None) -> dict:
    """Decode a GeoJSON FeatureCollection from bytes/str."""
    if isinstance(document, (bytes, bytearray)):
        try:
            document = document.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not valid UTF-8: {exc.reason}", offset=exc.start, source=source)
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, offset=exc.pos, source=source) from None
    except RecursionError:
        raise ParseError("document nested too deeply", source=source) from None
    if not isinstance(data, dict) or data.get("type") != "FeatureCollection":
        raise ValidationError("top-level object is not a FeatureCollection", source=source)
    features = data.get("features")
    if not isinstance(features, list):
        raise ValidationError("FeatureCollection has no 'features' list", source=source)
    return data


def _iter_positions(geometry) -> Iterable:
    coords = geometry.get("coordinates") if isinstance(geometry, dict) else None
    stack = [coords]
    while stack:
        item = stack.pop()
        if isinstance(item, list) and item and isinstance(item[0], (int, float)) \
                and not isinstance(item[0], bool):
            yield item
        elif isinstance(item, list):
            stack.extend(item)


def collection_origin(data: dict) -> GeoPoint | None:
    """Centre of the bounding box of every coordinate in ``data``, or None if empty."""
    lons, lats = [], []
    for feat in data.get("features", []):
        if not isinstance(feat, dict):
            continue
        for pos in _iter_positions(feat.get("geometry")):
            if len(pos) >= 2 and all(isinstance(v, (int, float)) for v in pos[:2]):
                lon, lat = float(pos[0]), float(pos[1])
                if math.isfinite(lon) and math.isfinite(lat):
                    lons.append(lon)
                    lats.append(lat)
    if not lons:
        return None
    return GeoPoint(0.5 * (min(lons) + max(lons)), 0.5 * (min(lats) + max(lats)))


def _geo_positions(coords, min_points: int) -> list[GeoPoint]:
    if not isinstance(coords, list):
        raise ValueError("coordinates must be an array")
    out = []
    for pos in coords:
        if not isinstance(pos, list) or len(pos) < 2:
            raise ValueError(f"bad position {pos!r}")
        lon, lat = pos[0], pos[1]
        if isinstance(lon, bool) or isinstance(lat, bool) \
                or not isinstance(lon, (int, float)) or not isinstance(lat, (int, float)):
            raise ValueError(f"bad position {pos!r}")
        out.append(GeoPoint(float(lon), float(lat)))
    if len(out) < min_points:
        raise ValueError(f"expected at least {min_points} positions, got {len(out)}")
    return out


def _dedupe(points: Sequence[Point2]) -> list[Point2]:
    out = []
    for p in points:
        if not out or p != out[-1]:
            out.append(p)
    return out


def _feature_geometry(feat, index, source):
    if not isinstance(feat, dict) or feat.get("type") != "Feature":
        raise ValidationError("not a GeoJSON Feature", feature_index=index, source=source)
    geom = feat.get("geometry")
    if not isinstance(geom, dict):
        raise ValidationError("feature has no geometry", feature_index=index, source=source)
    props = feat.get("properties")
    if props is None:
        props = {}
    if not isinstance(props, dict):
        raise ValidationError("properties is not an object", feature_index=index, source=source)
    return geom, props


def _int_property(props, keys, fallback):
    for key in keys:
        if key in props and props[key] is not None:
            value = props[key]
            if isinstance(value, bool):
                break
            try:
                as_float = float(value)
            except (TypeError, ValueError, OverflowError):
                break
            if math.isfinite(as_float) and as_float.is_integer():
                return int(as_float)
            break
    return fallback


# ---------------------------------------------------------------------------
# buildings


def parse_buildings(document, origin: GeoPoint | None = None, source=None) -> list[BuildingRecord]:
    """Parse building footprints, one record per polygon part.

    ``origin`` defaults to the centre of the document's bounding box.
    """
    data = load_feature_collection(document, source)
    if origin is None:
        origin = collection_origin(data) or GeoPoint(0.0, 0.0)
    records = []
    for index, feat in enumerate(data["features"]):
        geom, props = _feature_geometry(feat, index, source)
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [geom.get("coordinates")]
        elif gtype == "MultiPolygon":
            parts = geom.get("coordinates")
            if not isinstance(parts, list):
                raise ValidationError("MultiPolygon coordinates must be an array",
                                      feature_index=index, source=source)
        else:
            raise ValidationError(f"expected Polygon or MultiPolygon, got {gtype!r}",
                                  feature_index=index, source=source)
        building_id = _int_property(props, ("building_id", "BuildingId", "id"), index)
        for part in parts:
            try:
                if not isinstance(part, list) or not part:
                    raise ValueError("polygon has no rings")
                rings = [project_to_local(_geo_positions(r, 4), origin) for r in part]
                footprint = Polygon(tuple(rings[0]), tuple(tuple(r) for r in rings[1:]))
            except (GeometryError, ValueError, TypeError) as exc:
                raise ValidationError(str(exc), feature_index=index, source=source) from None
            records.append(BuildingRecord(building_id, footprint))
    return records


def buildings_to_geojson(records: Sequence[BuildingRecord], origin: GeoPoint) -> dict:
    features = []
    for rec in records:
        rings = []
        for ring in rec.footprint.rings():
            pts = [list(p) for p in unproject_to_geo(ring, origin)]
            pts.append(pts[0])
            rings.append(pts)
        features.append({
            "type": "Feature",
            "properties": {"building_id": rec.building_id},
            "geometry": {"type": "Polygon", "coordinates": rings},
        })
    return {"type": "FeatureCollection", "features": features}


# ---------------------------------------------------------------------------
# roads


def _road_attributes(props, index, source, strict):
    attrs = {}
    decoders = {
        "road_type": lambda v: _decode_enum(v, RoadType, _ROAD_TYPE_NAMES),
        "paved": lambda v: _decode_enum(v, Paved, _PAVED_NAMES),
        "bridge_type": lambda v: _decode_enum(v, BridgeType, _BRIDGE_NAMES),
        "lane_number": _decode_positive_int,
    }
    for key, decode in decoders.items():
        default = _ATTRIBUTE_DEFAULTS[key]
        raw = props.get(key)
        if raw is None or raw == "":
            # proposals routinely carry no attributes at all
            (log.warning if strict else log.debug)(
                "%sfeature %d: missing %r, using %s",
                        f"{source}: " if source else "", index, key, _describe(default))
            attrs[key] = default
            continue
        try:
            attrs[key] = decode(raw)
        except (ValueError, TypeError, OverflowError) as exc:
            if strict:
                raise ValidationError(f"{key}: {exc}", feature_index=index, source=source) from None
            log.warning("%sfeature %d: bad %r (%s), using %s",
                        f"{source}: " if source else "", index, key, exc, _describe(default))
            attrs[key] = default
    return attrs


def _describe(value):
    return value.name if isinstance(value, IntEnum) else repr(value)


def parse_roads(document, origin: GeoPoint | None = None, source=None,
                strict: bool = True) -> list[RoadSegmentRecord]:
    """Parse road centerlines, one record per linestring part.

    Missing attributes fall back to Unclassified / Unknown / one lane and are
    logged.  With ``strict=False`` (used for proposals) out-of-range attribute
    values are treated the same way instead of being rejected.
    """
    data = load_feature_collection(document, source)
    if origin is None:
        origin = collection_origin(data) or GeoPoint(0.0, 0.0)
    records = []
    for index, feat in enumerate(data["features"]):
        geom, props = _feature_geometry(feat, index, source)
        gtype = geom.get("type")
        if gtype == "LineString":
            parts = [geom.get("coordinates")]
        elif gtype == "MultiLineString":
            parts = geom.get("coordinates")
            if not isinstance(parts, list):
                raise ValidationError("MultiLineString coordinates must be an array",
                                      feature_index=index, source=source)
        else:
            raise ValidationError(f"expected LineString or MultiLineString, got {gtype!r}",
                                  feature_index=index, source=source)
        attrs = _road_attributes(props, index, source, strict)
        road_id = _int_property(props, ("road_id",), index)
        for part in parts:
            try:
                pts = _dedupe(project_to_local(_geo_positions(part, 2), origin))
                if len(pts) < 2:
                    raise ValueError("linestring has fewer than 2 distinct points")
                line = Polyline(tuple(pts))
            except (GeometryError, ValueError, TypeError) as exc:
                raise ValidationError(str(exc), feature_index=index, source=source) from None
            records.append(RoadSegmentRecord(line, road_id, **attrs))
    return records


def roads_to_geojson(records: Sequence[RoadSegmentRecord], origin: GeoPoint) -> dict:
    features = []
    for rec in records:
        coords = [list(p) for p in unproject_to_geo(rec.geometry.vertices, origin)]
        features.append({
            "type": "Feature",
            "properties": {
                "road_id": rec.road_id,
                "road_type": int(rec.road_type),
                "paved": int(rec.paved),
                "bridge_type": int(rec.bridge_type),
                "lane_number": rec.lane_number,
            },
            "geometry": {"type": "LineString", "coordinates": coords},
        })
    return {"type": "FeatureCollection", "features": features}


def dumps(collection: dict) -> bytes:
    return json.dumps(collection, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# tile pairing


def _tile_key(path: Path, pattern: re.Pattern):
    m = pattern.search(path.stem)
    if m is None:
        return None
    groups = m.groupdict()
    tile_id = groups.get("tile") or m.group(0)
    city = groups.get("city") or ""
    return tile_id, city


def _index_dir(directory: Path, pattern: re.Pattern, suffixes) -> dict:
    if not directory.is_dir():
        raise ConfigurationError(f"not a directory: {directory}")
    found = {}
    for path in sorted(directory.iterdir()):
        if not path.is_file() or path.suffix.lower() not in suffixes:
            continue
        key = _tile_key(path, pattern)
        if key is None:
            log.warning("%s: no tile id in file name, skipped", path)
            continue
        if key[0] in found:
            raise ConfigurationError(
                f"duplicate tile id {key[0]!r} in {directory}: "
                f"{found[key[0]][1].name} and {path.name}")
        found[key[0]] = (key[1], path)
    return found


def compile_tile_pattern(tile_pattern: str) -> re.Pattern:
    try:
        return re.compile(tile_pattern)
    except re.error as exc:
        raise ConfigurationError(f"bad tile pattern {tile_pattern!r}: {exc}") from None


def index_tile_files(directory, tile_pattern: str = DEFAULT_TILE_PATTERN,
                     suffixes=GEOJSON_SUFFIXES) -> dict:
    """Map tile id -> (city, path) for the matching files of one directory."""
    return _index_dir(Path(directory), compile_tile_pattern(tile_pattern), suffixes)


def pair_tile_files(truth_dir, proposal_dir, tile_pattern: str = DEFAULT_TILE_PATTERN,
                    suffixes=GEOJSON_SUFFIXES) -> list[TilePaths]:
    """Match truth and proposal files by tile id, sorted by tile id.

    A truth tile without a proposal is kept with ``proposal=None``; a
    proposal without a truth tile is logged and dropped.
    """
    pattern = compile_tile_pattern(tile_pattern)
    truth = _index_dir(Path(truth_dir), pattern, suffixes)
    proposals = _index_dir(Path(proposal_dir), pattern, suffixes)
    for tile_id in sorted(set(proposals) - set(truth)):
        log.warning("orphan proposal %s has no truth tile, excluded", proposals[tile_id][1])
    pairs = []
    for tile_id in sorted(truth):
        city, path = truth[tile_id]
        prop = proposals.get(tile_id)
        if prop is None:
            log.warning("tile %s: no proposal file, scoring as empty", tile_id)
        pairs.append(TilePaths(tile_id, city, path, prop[1] if prop else None))
    return pairs


def load_tile(paths: TilePaths, kind: str) -> TileSet:
    """Parse both sides of a tile into one local frame."""
    if kind not in ("roads", "buildings"):
        raise ConfigurationError(f"unknown tile kind {kind!r}")
    truth_doc = paths.truth.read_bytes()
    prop_doc = paths.proposal.read_bytes() if paths.proposal is not None else None
    origin = collection_origin(load_feature_collection(truth_doc, paths.truth))
    if origin is None and prop_doc is not None:
        origin = collection_origin(load_feature_collection(prop_doc, paths.proposal))
    origin = origin or GeoPoint(0.0, 0.0)
    if kind == "roads":
        truth = parse_roads(truth_doc, origin, source=paths.truth, strict=True)
        proposal = (parse_roads(prop_doc, origin, source=paths.proposal, strict=False)
                    if prop_doc is not None else [])
    else:
        truth = parse_buildings(truth_doc, origin, source=paths.truth)
        proposal = (parse_buildings(prop_doc, origin, source=paths.proposal)
                    if prop_doc is not None else [])
    return TileSet(paths.tile_id, truth, proposal, origin, paths.city)


def pair_tiles(truth_dir, proposal_dir, kind: str = "roads",
               tile_pattern: str = DEFAULT_TILE_PATTERN) -> list[TileSet]:
    return [load_tile(p, kind) for p in pair_tile_files(truth_dir, proposal_dir, tile_pattern)]
