"""Command-line entry point.

Exit codes: 0 success, 2 bad paths or arguments, 3 malformed input files,
4 conflicting configuration (duplicate tile ids, invalid parameters).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .apls import (
    DEFAULT_BUFFER,
    TileRoadScore,
    aggregate_road_scores,
    mean,
    score_road_tile,
)
from .buildings import (
    DEFAULT_IOU_THRESHOLD,
    match_buildings,
    overall_buildings_score,
    score_city,
)
from .errors import ConfigurationError, GeoscoreError, ParseError, ValidationError
from .ingest import (
    DEFAULT_TILE_PATTERN,
    RoadSegmentRecord,
    collection_origin,
    dumps,
    index_tile_files,
    load_feature_collection,
    load_tile,
    pair_tile_files,
    parse_roads,
    roads_to_geojson,
)
from .maskgraph import (
    DEFAULT_HALFWIDTH,
    DEFAULT_PIXEL_SIZE,
    DEFAULT_PRUNE_PX,
    DEFAULT_RELAX_RADIUS,
    DEFAULT_SIMPLIFY_PX,
    RasterMask,
    pixel_metrics,
    read_mask,
    refine_mask,
    render_road_mask,
    skeleton_to_graph,
    skeletonize,
    write_mask,
)
from .roadgraph import DEFAULT_MERGE_TOLERANCE, DEFAULT_MIDPOINT_SPACING, build_graph, graph_to_geojson

log = logging.getLogger("geoscore")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CONFIG = 4

COMMANDS = ("score-buildings", "score-roads", "make-masks", "mask2graph", "pixel-metrics")


@dataclass
class RunConfig:
    command: str
    truth_path: str | None = None
    proposal_path: str | None = None
    output_path: str | None = None
    summary_path: str | None = None
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    apls_buffer: float = DEFAULT_BUFFER
    midpoint_spacing: float = DEFAULT_MIDPOINT_SPACING
    merge_tolerance: float = DEFAULT_MERGE_TOLERANCE
    proposal_midpoints: bool = True
    relax_radius: float = DEFAULT_RELAX_RADIUS
    pixel_size: float = DEFAULT_PIXEL_SIZE
    halfwidth: float = DEFAULT_HALFWIDTH
    pad: float = 10.0
    threshold: float = 0.5
    open_radius: int = 0
    close_radius: int = 0
    prune_px: float = DEFAULT_PRUNE_PX
    simplify_px: float = DEFAULT_SIMPLIFY_PX
    tile_regex: str = DEFAULT_TILE_PATTERN
    parallelism: int = 1
    debug_geojson: str | None = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        positive = {
            "iou_threshold": self.iou_threshold,
            "midpoint_spacing": self.midpoint_spacing,
            "pixel_size": self.pixel_size,
            "parallelism": self.parallelism,
        }
        for name, value in positive.items():
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be positive, got {value}")
        non_negative = {
            "apls_buffer": self.apls_buffer,
            "merge_tolerance": self.merge_tolerance,
            "relax_radius": self.relax_radius,
            "halfwidth": self.halfwidth,
            "pad": self.pad,
            "open_radius": self.open_radius,
            "close_radius": self.close_radius,
            "prune_px": self.prune_px,
            "simplify_px": self.simplify_px,
        }
        for name, value in non_negative.items():
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be non-negative, got {value}")
        if self.iou_threshold > 1:
            raise ConfigurationError(f"iou_threshold must be <= 1, got {self.iou_threshold}")


class UsageError(GeoscoreError):
    """Bad paths or arguments (exit code 2)."""


def _require_dir(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_dir():
        raise UsageError(f"{what} {path} is not a directory")


def _fmt(value: float) -> str:
    return f"{value:.10f}"


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def _summary_path(config: RunConfig) -> Path:
    if config.summary_path:
        return Path(config.summary_path)
    return Path(config.output_path).with_suffix(".json")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _map(config: RunConfig, fn, items):
    if config.parallelism > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            chunk = max(1, len(items) // (4 * config.parallelism))
            return list(pool.map(fn, items, chunksize=chunk))
    return [fn(item) for item in items]


# ---------------------------------------------------------------------------
# score-buildings


def _score_building_tile(packed):
    paths, threshold = packed
    tile = load_tile(paths, "buildings")
    scene = match_buildings(tile.truth, tile.proposal, threshold, tile_id=tile.tile_id)
    return tile.city, scene


def cmd_score_buildings(config: RunConfig) -> dict:
    _require_dir(config.truth_path, "--truth")
    _require_dir(config.proposal_path, "--proposal")
    pairs = pair_tile_files(config.truth_path, config.proposal_path, config.tile_regex)
    if not pairs:
        raise UsageError(f"no truth tiles found in {config.truth_path}")
    results = _map(config, _score_building_tile, [(p, config.iou_threshold) for p in pairs])
    results.sort(key=lambda r: r[1].tile_id)
    by_city = {}
    for city, scene in results:
        by_city.setdefault(city, []).append(scene)
    cities = [score_city(scenes, city) for city, scenes in sorted(by_city.items())]
    total = overall_buildings_score(cities)

    rows = []
    for city, s in results:
        rows.append(["scene", s.tile_id, city, s.true_positives, s.false_positives,
                     s.false_negatives, "", "", ""])
    for c in cities:
        rows.append(["city", c.city, c.city, c.true_positives, c.false_positives,
                     c.false_negatives, _fmt(c.precision), _fmt(c.recall), _fmt(c.f1)])
    rows.append(["total", "", "", sum(c.true_positives for c in cities),
                 sum(c.false_positives for c in cities), sum(c.false_negatives for c in cities),
                 "", "", _fmt(total)])
    _write_csv(config.output_path,
               ["level", "id", "city", "tp", "fp", "fn", "precision", "recall", "f1"], rows)

    recomputed = overall_buildings_score(
        [score_city([s for c, s in results if c == city], city) for city in sorted(by_city)])
    summary = {
        "config": asdict(config),
        "tiles": len(results),
        "cities": {c.city: {"precision": c.precision, "recall": c.recall, "f1": c.f1,
                            "tp": c.true_positives, "fp": c.false_positives,
                            "fn": c.false_negatives} for c in cities},
        "total_f1": total,
        "consistency": {"recomputed_total_f1": recomputed, "ok": recomputed == total},
    }
    _write_json(_summary_path(config), summary)
    return summary


# ---------------------------------------------------------------------------
# score-roads


def _score_road_paths(packed):
    paths, config = packed
    tile = load_tile(paths, "roads")
    result = score_road_tile(tile, config.apls_buffer, config.midpoint_spacing,
                             config.merge_tolerance, config.proposal_midpoints)
    if config.debug_geojson:
        out = Path(config.debug_geojson)
        for side, records in (("truth", tile.truth), ("proposal", tile.proposal)):
            graph = build_graph(records, config.merge_tolerance)
            (out / f"{tile.tile_id}_{side}_graph.geojson").write_bytes(
                dumps(graph_to_geojson(graph, tile.origin)))
    return result


def cmd_score_roads(config: RunConfig) -> dict:
    _require_dir(config.truth_path, "--truth")
    _require_dir(config.proposal_path, "--proposal")
    if config.debug_geojson:
        Path(config.debug_geojson).mkdir(parents=True, exist_ok=True)
    pairs = pair_tile_files(config.truth_path, config.proposal_path, config.tile_regex)
    if not pairs:
        raise UsageError(f"no truth tiles found in {config.truth_path}")
    rows: list[TileRoadScore] = _map(config, _score_road_paths, [(p, config) for p in pairs])
    report = aggregate_road_scores(rows)
    csv_rows = []
    for r in report.tiles:
        s = r.score
        csv_rows.append([r.tile_id, _fmt(s.part1), _fmt(s.part2), _fmt(s.total),
                         s.path_counts[0], s.path_counts[1],
                         s.missing_paths[0], s.missing_paths[1]])
    _write_csv(config.output_path,
               ["tile_id", "part1", "part2", "total", "N1", "N2", "missing1", "missing2"],
               csv_rows)
    by_city = {}
    for r in report.tiles:
        by_city.setdefault(r.city, []).append(r.score.total)
    recomputed = mean([mean(v) for _, v in sorted(by_city.items())])
    summary = {
        "config": asdict(config),
        "tiles": len(report.tiles),
        "cities": report.cities,
        "total_apls": report.total,
        "consistency": {"recomputed_total_apls": recomputed, "ok": recomputed == report.total},
    }
    _write_json(_summary_path(config), summary)
    return summary


# ---------------------------------------------------------------------------
# make-masks / mask2graph / pixel-metrics


def _snap_extent(bounds, pad, pixel_size):
    min_x, min_y, max_x, max_y = bounds
    return (math.floor((min_x - pad) / pixel_size) * pixel_size,
            math.floor((min_y - pad) / pixel_size) * pixel_size,
            math.ceil((max_x + pad) / pixel_size) * pixel_size,
            math.ceil((max_y + pad) / pixel_size) * pixel_size)


def _make_mask(packed):
    path, out_dir, config = packed
    doc = Path(path).read_bytes()
    origin = collection_origin(load_feature_collection(doc, path))
    if origin is None:
        log.warning("%s: no roads, mask skipped", path)
        return None
    roads = parse_roads(doc, origin, source=path)
    if not roads:
        log.warning("%s: no usable road geometry, mask skipped", path)
        return None
    xs = [v.x for r in roads for v in r.geometry.vertices]
    ys = [v.y for r in roads for v in r.geometry.vertices]
    extent = _snap_extent((min(xs), min(ys), max(xs), max(ys)), config.pad, config.pixel_size)
    mask = render_road_mask(roads, extent, config.pixel_size, config.halfwidth)
    out = Path(out_dir) / (Path(path).stem + ".png")
    write_mask(mask, out, origin)
    return str(out)


def cmd_make_masks(config: RunConfig) -> dict:
    _require_dir(config.truth_path, "--truth")
    if config.output_path is None:
        raise UsageError("--out is required")
    out_dir = Path(config.output_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for _, p in index_tile_files(config.truth_path, config.tile_regex).values())
    written = _map(config, _make_mask, [(p, out_dir, config) for p in files])
    summary = {"config": asdict(config), "masks": sorted(w for w in written if w)}
    if config.summary_path:
        _write_json(config.summary_path, summary)
    return summary


def _mask_to_geojson(packed):
    path, out_dir, config = packed
    raw, geo_origin = read_mask(path, threshold=None)
    if geo_origin is None:
        raise ParseError("sidecar has no geo_origin_lon/geo_origin_lat", source=path)
    refined = refine_mask(raw, config.threshold, config.open_radius, config.close_radius)
    graph = skeleton_to_graph(skeletonize(refined), prune_px=config.prune_px,
                              simplify_px=config.simplify_px)
    records = [RoadSegmentRecord(e.geometry, i) for i, e in enumerate(graph.edges)]
    out = Path(out_dir) / (Path(path).stem + ".geojson")
    out.write_bytes(dumps(roads_to_geojson(records, geo_origin)))
    return str(out)


def cmd_mask2graph(config: RunConfig) -> dict:
    _require_dir(config.truth_path, "--masks")
    if config.output_path is None:
        raise UsageError("--out is required")
    out_dir = Path(config.output_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(p for _, p in index_tile_files(config.truth_path, config.tile_regex,
                                                  suffixes=(".png",)).values())
    written = _map(config, _mask_to_geojson, [(p, out_dir, config) for p in files])
    summary = {"config": asdict(config), "graphs": sorted(written)}
    if config.summary_path:
        _write_json(config.summary_path, summary)
    return summary


def _pixel_tile(packed):
    paths, radius = packed
    truth, _ = read_mask(paths.truth)
    if paths.proposal is None:
        proposal = RasterMask(truth.data & False, truth.transform)
    else:
        proposal, _ = read_mask(paths.proposal)
    if proposal.data.shape != truth.data.shape:
        raise ConfigurationError(
            f"{paths.proposal}: shape {proposal.data.shape} differs from truth {truth.data.shape}")
    return paths.tile_id, paths.city, pixel_metrics(truth, proposal, radius)


def cmd_pixel_metrics(config: RunConfig) -> dict:
    _require_dir(config.truth_path, "--truth")
    _require_dir(config.proposal_path, "--proposal")
    pairs = pair_tile_files(config.truth_path, config.proposal_path, config.tile_regex,
                            suffixes=(".png",))
    if not pairs:
        raise UsageError(f"no truth masks found in {config.truth_path}")
    results = _map(config, _pixel_tile, [(p, config.relax_radius) for p in pairs])
    _write_csv(config.output_path, ["tile_id", "iou", "f1", "relaxed_f1"],
               [[t, _fmt(s.iou), _fmt(s.f1), _fmt(s.relaxed_f1)] for t, _, s in results])
    summary = {
        "config": asdict(config),
        "tiles": len(results),
        "mean_iou": mean([s.iou for *_, s in results]),
        "mean_f1": mean([s.f1 for *_, s in results]),
        "mean_relaxed_f1": mean([s.relaxed_f1 for *_, s in results]),
    }
    _write_json(_summary_path(config), summary)
    return summary


_DISPATCH = {
    "score-buildings": cmd_score_buildings,
    "score-roads": cmd_score_roads,
    "make-masks": cmd_make_masks,
    "mask2graph": cmd_mask2graph,
    "pixel-metrics": cmd_pixel_metrics,
}


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    try:
        config.validate()
        if config.command in ("score-buildings", "score-roads", "pixel-metrics") \
                and config.output_path is None:
            raise UsageError("--out is required")
        _DISPATCH[config.command](config)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (ParseError, ValidationError) as exc:
        log.error("malformed input: %s", exc)
        return EXIT_INPUT
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p, truth_help="ground-truth directory", proposal=True, out_help="output CSV",
            truth_flag="--truth"):
    p.add_argument(truth_flag, dest="truth_path", required=True, help=truth_help)
    if proposal:
        p.add_argument("--proposal", dest="proposal_path", required=True,
                       help="proposal directory")
    p.add_argument("--out", dest="output_path", required=True, help=out_help)
    p.add_argument("--tile-regex", dest="tile_regex", default=DEFAULT_TILE_PATTERN,
                   help="regex locating the tile id in file names; optional named groups "
                        "'tile' and 'city' (default: %(default)s)")
    p.add_argument("--workers", dest="parallelism", type=int, default=1,
                   help="worker processes (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoscore", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score-buildings", help="F1 over IoU-matched building footprints")
    _common(p)
    p.add_argument("--summary", dest="summary_path")
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float,
                   default=DEFAULT_IOU_THRESHOLD)

    p = sub.add_parser("score-roads", help="APLS of proposal road networks")
    _common(p)
    p.add_argument("--summary", dest="summary_path")
    p.add_argument("--buffer", dest="apls_buffer", type=float, default=DEFAULT_BUFFER,
                   help="snap buffer in meters (default: %(default)s)")
    p.add_argument("--spacing", dest="midpoint_spacing", type=float,
                   default=DEFAULT_MIDPOINT_SPACING,
                   help="midpoint control-node spacing in meters (default: %(default)s)")
    p.add_argument("--merge-tolerance", dest="merge_tolerance", type=float,
                   default=DEFAULT_MERGE_TOLERANCE,
                   help="endpoint merge distance in meters (default: %(default)s)")
    p.add_argument("--no-proposal-midpoints", dest="proposal_midpoints", action="store_false",
                   help="use only proposal endpoints/intersections as reverse-direction "
                        "control nodes")
    p.add_argument("--debug-geojson", dest="debug_geojson",
                   help="directory for per-tile graph GeoJSON exports")

    p = sub.add_parser("make-masks", help="rasterize road labels into PNG training masks")
    _common(p, truth_help="road label directory", proposal=False, out_help="output directory")
    p.add_argument("--pixel-size", dest="pixel_size", type=float, default=DEFAULT_PIXEL_SIZE)
    p.add_argument("--halfwidth", type=float, default=DEFAULT_HALFWIDTH)
    p.add_argument("--pad", type=float, default=10.0, help="margin around the labels in meters")
    p.add_argument("--summary", dest="summary_path", help="optional JSON run summary")

    p = sub.add_parser("mask2graph", help="skeletonize PNG masks into road GeoJSON")
    _common(p, truth_help="mask directory (PNG + .geotransform.json)", proposal=False,
            out_help="output directory", truth_flag="--masks")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--open-radius", dest="open_radius", type=int, default=0)
    p.add_argument("--close-radius", dest="close_radius", type=int, default=0)
    p.add_argument("--prune-px", dest="prune_px", type=float, default=DEFAULT_PRUNE_PX)
    p.add_argument("--simplify-px", dest="simplify_px", type=float, default=DEFAULT_SIMPLIFY_PX)
    p.add_argument("--summary", dest="summary_path", help="optional JSON run summary")

    p = sub.add_parser("pixel-metrics", help="pixel IoU / F1 / relaxed F1 between PNG masks")
    _common(p)
    p.add_argument("--summary", dest="summary_path")
    p.add_argument("--relax-radius", dest="relax_radius", type=float,
                   default=DEFAULT_RELAX_RADIUS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    values = vars(args)
    values.pop("verbose")
    known = {f for f in RunConfig.__dataclass_fields__}
    config = RunConfig(**{k: v for k, v in values.items() if k in known})
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
