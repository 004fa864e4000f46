"""Scoring toolkit for building-footprint and road-network extraction from overhead imagery."""

__version__ = "0.1.0"

from .apls import AplsScore, apls, score_road_challenge
from .buildings import match_buildings, overall_buildings_score, score_city
from .errors import (
    ConfigurationError,
    GeometryError,
    GeoscoreError,
    ParseError,
    ValidationError,
)
from .geometry import GeoPoint, Point2, Polygon, Polyline, iou, polygon_intersection_area
from .ingest import BuildingRecord, RoadSegmentRecord, parse_buildings, parse_roads
from .roadgraph import RoadGraph, build_graph, inject_midpoints, shortest_path_length

__all__ = [
    "AplsScore", "BuildingRecord", "ConfigurationError", "GeoPoint", "GeometryError",
    "GeoscoreError", "ParseError", "Point2", "Polygon", "Polyline", "RoadGraph",
    "RoadSegmentRecord", "ValidationError", "apls", "build_graph", "inject_midpoints",
    "iou", "match_buildings", "overall_buildings_score", "parse_buildings", "parse_roads",
    "polygon_intersection_area", "score_city", "score_road_challenge", "shortest_path_length",
]
