import json
import logging
import math

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from geoscore.errors import ConfigurationError, GeoscoreError, ParseError, ValidationError
from geoscore.geometry import GeoPoint, Point2, Polygon, Polyline, polygon_area, unproject_to_geo
from geoscore.ingest import (
    BridgeType,
    BuildingRecord,
    Paved,
    RoadSegmentRecord,
    RoadType,
    buildings_to_geojson,
    collection_origin,
    dumps,
    load_feature_collection,
    pair_tile_files,
    pair_tiles,
    parse_buildings,
    parse_roads,
    roads_to_geojson,
)

import synth

ORIGIN = GeoPoint(0.0, 0.0)


def _fc(*features):
    return json.dumps({"type": "FeatureCollection", "features": list(features)}).encode()


def _feature(geometry, **props):
    return {"type": "Feature", "properties": props, "geometry": geometry}


def _square_deg(x0, y0, size):
    return [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]]


# -- buildings ----------------------------------------------------------------------


def test_one_square_building():
    # at the equator 1 m east == 1 m north == 1 / (R * pi / 180) degrees
    m = 180.0 / (6378137.0 * math.pi)
    doc = _fc(_feature({"type": "Polygon", "coordinates": [_square_deg(0, 0, m)]}, building_id=7))
    (rec,) = parse_buildings(doc, origin=ORIGIN)
    assert rec.building_id == 7
    assert polygon_area(rec.footprint) == pytest.approx(1.0, rel=1e-9)


def test_empty_collection():
    assert parse_buildings(_fc()) == []
    assert parse_roads(_fc()) == []


def test_multipolygon_parts_share_id():
    geom = {"type": "MultiPolygon",
            "coordinates": [[_square_deg(0, 0, 1e-4)], [_square_deg(1e-3, 0, 1e-4)]]}
    recs = parse_buildings(_fc(_feature(geom, building_id=3)))
    assert len(recs) == 2 and {r.building_id for r in recs} == {3}


def test_building_id_falls_back_to_feature_index():
    a = _feature({"type": "Polygon", "coordinates": [_square_deg(0, 0, 1e-4)]})
    b = _feature({"type": "Polygon", "coordinates": [_square_deg(1e-3, 0, 1e-4)]}, BuildingId="12")
    assert [r.building_id for r in parse_buildings(_fc(a, b))] == [0, 12]


def test_building_with_hole():
    geom = {"type": "Polygon", "coordinates": [_square_deg(0, 0, 4e-4), _square_deg(1e-4, 1e-4, 2e-4)]}
    (rec,) = parse_buildings(_fc(_feature(geom)))
    assert len(rec.footprint.holes) == 1
    assert polygon_area(rec.footprint) == pytest.approx(
        0.75 * polygon_area(Polygon(rec.footprint.exterior)), rel=1e-9)


def test_malformed_json_reports_offset():
    with pytest.raises(ParseError) as info:
        parse_buildings(b'{"type": "FeatureCollection", "features": [}')
    doc = b'{"type": "FeatureCollection", "features": [}'
    assert info.value.offset == doc.index(b"}")


def test_invalid_utf8_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_roads(b'{"type": "\xff"}')


@pytest.mark.parametrize("doc", [b"[]", b'{"type": "Feature"}', b'{"type": "FeatureCollection"}'])
def test_not_a_feature_collection(doc):
    with pytest.raises(ValidationError):
        parse_buildings(doc)


def test_non_polygon_names_feature_index():
    good = _feature({"type": "Polygon", "coordinates": [_square_deg(0, 0, 1e-4)]})
    bad = _feature({"type": "Point", "coordinates": [0, 0]})
    with pytest.raises(ValidationError) as info:
        parse_buildings(_fc(good, bad), source="tile.geojson")
    assert info.value.feature_index == 1
    assert "tile.geojson" in str(info.value) and "feature 1" in str(info.value)


def test_self_intersecting_footprint_rejected():
    bow = [[0, 0], [1e-4, 1e-4], [1e-4, 0], [0, 1e-4], [0, 0]]
    with pytest.raises(ValidationError):
        parse_buildings(_fc(_feature({"type": "Polygon", "coordinates": [bow]})))


def test_zero_area_footprint_rejected():
    flat = [[0, 0], [1e-4, 0], [2e-4, 0], [0, 0]]
    with pytest.raises(ValidationError):
        parse_buildings(_fc(_feature({"type": "Polygon", "coordinates": [flat]})))


# -- roads --------------------------------------------------------------------------


def _line(**props):
    return _feature({"type": "LineString", "coordinates": [[0, 0], [1e-3, 0]]}, **props)


def test_road_attributes_decoded():
    (rec,) = parse_roads(_fc(_line(road_type=5, paved=1, lane_number=2, bridge_type=2, road_id=9)))
    assert rec.road_type is RoadType.RESIDENTIAL
    assert rec.paved is Paved.PAVED
    assert rec.lane_number == 2
    assert rec.bridge_type is BridgeType.NOT_BRIDGE
    assert rec.road_id == 9


def test_string_attributes_case_insensitive():
    (rec,) = parse_roads(_fc(_line(road_type="Motorway", paved="UNPAVED", bridge_type="bridge",
                                   lane_number="3")))
    assert (rec.road_type, rec.paved, rec.bridge_type, rec.lane_number) == (
        RoadType.MOTORWAY, Paved.UNPAVED, BridgeType.BRIDGE, 3)


def test_missing_paved_defaults_with_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="geoscore"):
        (rec,) = parse_roads(_fc(_line(road_type=2, lane_number=1, bridge_type=2)))
    assert rec.paved is Paved.UNKNOWN
    assert any("paved" in r.getMessage() for r in caplog.records)


def test_no_attributes_defaults():
    (rec,) = parse_roads(_fc(_line()))
    assert (rec.road_type, rec.paved, rec.bridge_type, rec.lane_number) == (
        RoadType.UNCLASSIFIED, Paved.UNKNOWN, BridgeType.UNKNOWN, 1)


@pytest.mark.parametrize("props", [{"road_type": 9}, {"paved": 0}, {"lane_number": 0},
                                   {"lane_number": 1.5}, {"bridge_type": "maybe"},
                                   {"road_type": True}, {"road_type": 1e400},
                                   {"lane_number": "-2"}])
def test_bad_attributes_strict_vs_lenient(props):
    with pytest.raises(ValidationError):
        parse_roads(_fc(_line(**props)))
    (rec,) = parse_roads(_fc(_line(**props)), strict=False)
    assert rec.lane_number >= 1


def test_multilinestring_parts():
    geom = {"type": "MultiLineString",
            "coordinates": [[[0, 0], [1e-3, 0]], [[0, 1e-3], [1e-3, 1e-3]], [[0, 2e-3], [1e-3, 2e-3]]]}
    recs = parse_roads(_fc(_feature(geom, road_id=4)))
    assert len(recs) == 3 and {r.road_id for r in recs} == {4}


@pytest.mark.parametrize("coords", [[[0, 0]], [[0, 0], [0, 0]], [], [[0, "a"], [1, 1]], [[0, 0], [5, 0]]])
def test_degenerate_lines_rejected(coords):
    with pytest.raises(ValidationError):
        parse_roads(_fc(_feature({"type": "LineString", "coordinates": coords})), origin=ORIGIN)


def test_repeated_vertices_are_collapsed():
    geom = {"type": "LineString", "coordinates": [[0, 0], [0, 0], [1e-3, 0], [1e-3, 0], [1e-3, 1e-3]]}
    (rec,) = parse_roads(_fc(_feature(geom)), origin=ORIGIN)
    assert len(rec.geometry.vertices) == 3


def test_origin_is_bbox_centre():
    data = load_feature_collection(_fc(
        _feature({"type": "LineString", "coordinates": [[10, 20], [10.002, 20.004]]})))
    o = collection_origin(data)
    assert o.lon == pytest.approx(10.001, abs=1e-12) and o.lat == pytest.approx(20.002, abs=1e-12)
    assert collection_origin({"features": []}) is None


# -- round trips --------------------------------------------------------------------


# centimetre grid: sub-nanodegree spacings are below what lon/lat can carry
_local = st.integers(-30000, 30000).map(lambda v: v / 100.0)


@st.composite
def _road_records(draw):
    n = draw(st.integers(0, 5))
    out = []
    for i in range(n):
        pts = draw(st.lists(st.tuples(_local, _local), min_size=2, max_size=6, unique=True))
        try:
            line = Polyline(pts)
        except GeoscoreError:
            continue
        out.append(RoadSegmentRecord(
            line, i,
            draw(st.sampled_from(list(RoadType))),
            draw(st.sampled_from(list(Paved))),
            draw(st.sampled_from(list(BridgeType))),
            draw(st.integers(1, 8))))
    return out


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(_road_records(), st.floats(-170, 170), st.floats(-70, 70))
def test_roads_round_trip(records, lon, lat):
    origin = GeoPoint(lon, lat)
    doc = dumps(roads_to_geojson(records, origin))
    back = parse_roads(doc, origin=origin)
    assert len(back) == len(records)
    for a, b in zip(records, back):
        assert (a.road_id, a.road_type, a.paved, a.bridge_type, a.lane_number) == (
            b.road_id, b.road_type, b.paved, b.bridge_type, b.lane_number)
        ga = unproject_to_geo(a.geometry.vertices, origin)
        gb = unproject_to_geo(b.geometry.vertices, origin)
        assert len(ga) == len(gb)
        for p, q in zip(ga, gb):
            assert abs(p.lon - q.lon) < 1e-9 and abs(p.lat - q.lat) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.floats(1.0, 8.0)),
                min_size=0, max_size=6, unique_by=lambda t: (t[0], t[1])),
       st.floats(-170, 170), st.floats(-70, 70))
def test_buildings_round_trip(cells, lon, lat):
    origin = GeoPoint(lon, lat)
    records = [BuildingRecord(i, synth.square(10 * cx, 10 * cy, s)) for i, (cx, cy, s) in enumerate(cells)]
    back = parse_buildings(dumps(buildings_to_geojson(records, origin)), origin=origin)
    assert [r.building_id for r in back] == [r.building_id for r in records]
    for a, b in zip(records, back):
        ga = unproject_to_geo(a.footprint.exterior, origin)
        gb = unproject_to_geo(b.footprint.exterior, origin)
        for p, q in zip(ga, gb):
            assert abs(p.lon - q.lon) < 1e-9 and abs(p.lat - q.lat) < 1e-9


# -- fuzzing ------------------------------------------------------------------------


_json_leaf = st.one_of(st.none(), st.booleans(), st.integers(-10**30, 10**30),
                       st.floats(allow_nan=False, allow_infinity=False), st.text(max_size=5))
_json = st.recursive(_json_leaf, lambda c: st.lists(c, max_size=4) | st.dictionaries(
    st.sampled_from(["type", "coordinates", "geometry", "properties", "features", "road_type",
                     "paved", "lane_number", "bridge_type", "building_id"]), c, max_size=4),
    max_leaves=30)


@st.composite
def _almost_geojson(draw):
    kind = draw(st.sampled_from(["LineString", "MultiLineString", "Polygon", "MultiPolygon", "Point", None]))
    coords = draw(st.one_of(_json, st.lists(st.lists(st.floats(-1e-3, 1e-3), min_size=1, max_size=3),
                                            max_size=5)))
    feat = {"type": draw(st.sampled_from(["Feature", "feature", None])),
            "geometry": {"type": kind, "coordinates": coords},
            "properties": draw(_json)}
    return {"type": "FeatureCollection", "features": [feat, draw(_json)][:draw(st.integers(1, 2))]}


def _check_records(records):
    for rec in records:
        if isinstance(rec, RoadSegmentRecord):
            assert rec.geometry.length > 0 and len(rec.geometry.vertices) >= 2
            assert all(math.isfinite(c) for v in rec.geometry.vertices for c in v)
            assert rec.lane_number >= 1
        else:
            assert polygon_area(rec.footprint) > 0


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.one_of(st.binary(max_size=200), _json.map(lambda v: json.dumps(v).encode()),
                 _almost_geojson().map(lambda v: json.dumps(v).encode())))
def test_fuzzed_documents_never_crash(doc):
    for parse in (parse_roads, lambda d: parse_roads(d, strict=False), parse_buildings):
        try:
            _check_records(parse(doc))
        except GeoscoreError:
            pass


# -- tile pairing -------------------------------------------------------------------


def _touch_tiles(directory, names):
    directory.mkdir(exist_ok=True)
    for n in names:
        synth.write_roads(directory / n, synth.grid_lines(2, 2, 50))


def test_three_matching_tiles(tmp_path):
    names = [synth.tile_name("AOI_2_Vegas", k) for k in range(3)]
    _touch_tiles(tmp_path / "t", names)
    _touch_tiles(tmp_path / "p", [n.replace("train", "pred") for n in names])
    tiles = pair_tiles(tmp_path / "t", tmp_path / "p")
    assert [t.tile_id for t in tiles] == [f"AOI_2_Vegas_img{k}" for k in range(3)]
    assert all(t.proposal and t.city == "AOI_2_Vegas" for t in tiles)
    assert all(t.origin == tiles[0].origin for t in tiles)


def test_missing_proposal_gives_empty_tile(tmp_path, caplog):
    names = [synth.tile_name("AOI_2_Vegas", k) for k in range(3)]
    _touch_tiles(tmp_path / "t", names)
    _touch_tiles(tmp_path / "p", names[:2])
    with caplog.at_level(logging.WARNING, logger="geoscore"):
        tiles = pair_tiles(tmp_path / "t", tmp_path / "p")
    assert len(tiles) == 3 and tiles[2].proposal == []
    assert any("no proposal" in r.getMessage() for r in caplog.records)


def test_orphan_proposal_excluded(tmp_path, caplog):
    _touch_tiles(tmp_path / "t", [synth.tile_name("AOI_2_Vegas", 0)])
    _touch_tiles(tmp_path / "p", [synth.tile_name("AOI_2_Vegas", 0), synth.tile_name("AOI_2_Vegas", 5)])
    with caplog.at_level(logging.WARNING, logger="geoscore"):
        pairs = pair_tile_files(tmp_path / "t", tmp_path / "p")
    assert [p.tile_id for p in pairs] == ["AOI_2_Vegas_img0"]
    assert any("orphan" in r.getMessage() for r in caplog.records)


def test_duplicate_tile_ids_rejected(tmp_path):
    _touch_tiles(tmp_path / "t", ["a_AOI_2_Vegas_img1.geojson", "b_AOI_2_Vegas_img1.geojson"])
    _touch_tiles(tmp_path / "p", [])
    with pytest.raises(ConfigurationError):
        pair_tile_files(tmp_path / "t", tmp_path / "p")


def test_custom_tile_regex(tmp_path):
    _touch_tiles(tmp_path / "t", ["chip_0001.geojson", "chip_0002.geojson"])
    _touch_tiles(tmp_path / "p", ["chip_0002.geojson"])
    pairs = pair_tile_files(tmp_path / "t", tmp_path / "p", r"chip_(?P<tile>\d+)")
    assert [(p.tile_id, p.proposal is not None) for p in pairs] == [("0001", False), ("0002", True)]


def test_bad_tile_regex(tmp_path):
    (tmp_path / "t").mkdir()
    with pytest.raises(ConfigurationError):
        pair_tile_files(tmp_path / "t", tmp_path / "t", "(unclosed")


def test_proposal_projected_with_truth_origin(tmp_path):
    name = synth.tile_name("AOI_2_Vegas", 0)
    (tmp_path / "t").mkdir()
    (tmp_path / "p").mkdir()
    synth.write_roads(tmp_path / "t" / name, [Polyline([(0, 0), (100, 0)])])
    synth.write_roads(tmp_path / "p" / name, [Polyline([(0, 0), (50, 0)])])
    (tile,) = pair_tiles(tmp_path / "t", tmp_path / "p")
    # truth spans x in [0, 100] so its bbox centre sits at x = 50
    assert tile.truth[0].geometry.start.x == pytest.approx(-50.0, abs=1e-6)
    assert tile.proposal[0].geometry.start.x == pytest.approx(-50.0, abs=1e-6)
    assert tile.proposal[0].geometry.end.x == pytest.approx(0.0, abs=1e-6)
