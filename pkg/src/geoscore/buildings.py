"""Building footprint scoring: greedy IoU matching and F1 aggregation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from statistics import median
from typing import Iterable, Sequence

from .errors import ConfigurationError
from .geometry import bounds_overlap, iou
from .ingest import BuildingRecord

DEFAULT_IOU_THRESHOLD = 0.5


@dataclass
class SceneScore:
    tile_id: str
    true_positives: int
    false_positives: int
    false_negatives: int
    matches: list = field(default_factory=list)  # (truth_id, proposal_id, iou)


@dataclass
class CityScore:
    city: str
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int


class BoxIndex:
    """Uniform-grid bucket index over axis-aligned bounding boxes."""

    def __init__(self, boxes: Sequence[tuple[float, float, float, float]]):
        self.boxes = list(boxes)
        sizes = [max(b[2] - b[0], b[3] - b[1]) for b in self.boxes]
        self.cell = max(median(sizes), 1e-9) if sizes else 1.0
        self.buckets = defaultdict(list)
        for i, b in enumerate(self.boxes):
            for key in self._cells(b):
                self.buckets[key].append(i)

    def _cells(self, b):
        c = self.cell
        x0, y0 = math.floor(b[0] / c), math.floor(b[1] / c)
        x1, y1 = math.floor(b[2] / c), math.floor(b[3] / c)
        for gx in range(x0, x1 + 1):
            for gy in range(y0, y1 + 1):
                yield gx, gy

    def query(self, box) -> list[int]:
        """Indices of stored boxes overlapping ``box``, ascending."""
        hits = set()
        for key in self._cells(box):
            for i in self.buckets.get(key, ()):
                if i not in hits and bounds_overlap(self.boxes[i], box):
                    hits.add(i)
        return sorted(hits)


def _record_key(rec: BuildingRecord):
    return rec.building_id, rec.footprint.exterior, rec.footprint.holes


def match_buildings(truth: Sequence[BuildingRecord], proposal: Sequence[BuildingRecord],
                    threshold: float = DEFAULT_IOU_THRESHOLD, tile_id: str = "") -> SceneScore:
    """Greedy one-to-one matching in order of decreasing IoU.

    Every pair with IoU >= ``threshold`` is a candidate.  Candidates are
    consumed from the highest IoU down, and a match removes both of its
    footprints from further consideration.  Equal IoUs are ordered by
    ``(truth_id, proposal_id)`` and then by geometry, so the result does not
    depend on input order.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(f"IoU threshold must be in (0, 1], got {threshold}")
    truth = sorted(truth, key=_record_key)
    proposal = sorted(proposal, key=_record_key)
    index = BoxIndex([p.footprint.bounds for p in proposal])
    candidates = []
    for ti, t in enumerate(truth):
        for pi in index.query(t.footprint.bounds):
            value = iou(t.footprint, proposal[pi].footprint)
            if value >= threshold:
                candidates.append((-value, ti, pi))
    # indices follow the canonical key order, so sorting them is the tie-break
    candidates.sort()
    used_t, used_p = set(), set()
    matches = []
    for neg_iou, ti, pi in candidates:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        matches.append((truth[ti].building_id, proposal[pi].building_id, -neg_iou))
    tp = len(matches)
    return SceneScore(tile_id, tp, len(proposal) - tp, len(truth) - tp, matches)


def f1_score(precision: float, recall: float) -> float:
    if precision + recall <= 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def score_city(scenes: Iterable[SceneScore], city: str = "") -> CityScore:
    scenes = list(scenes)
    if not scenes:
        raise ConfigurationError("score_city needs at least one scene")
    tp = sum(s.true_positives for s in scenes)
    fp = sum(s.false_positives for s in scenes)
    fn = sum(s.false_negatives for s in scenes)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return CityScore(city, precision, recall, f1_score(precision, recall), tp, fp, fn)


def overall_buildings_score(cities: Sequence[CityScore] | Sequence[float]) -> float:
    """Unweighted mean of per-city F1 (accepts CityScore objects or bare F1 values)."""
    values = [c.f1 if isinstance(c, CityScore) else float(c) for c in cities]
    if not values:
        raise ConfigurationError("need at least one city")
    return math.fsum(values) / len(values)
