import random

import numpy as np
import pytest
import shapely.geometry as sg
from hypothesis import given, settings
from hypothesis import strategies as st

from geoscore.buildings import (
    BoxIndex,
    CityScore,
    SceneScore,
    f1_score,
    match_buildings,
    overall_buildings_score,
    score_city,
)
from geoscore.errors import ConfigurationError
from geoscore.geometry import Polygon
from geoscore.ingest import BuildingRecord

from oracles import brute_force_max_matches
import synth


def rect(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def rec(i, poly):
    return BuildingRecord(i, poly)


def test_identical_single_building():
    s = match_buildings([rec(0, rect(0, 0, 1, 1))], [rec(0, rect(0, 0, 1, 1))])
    assert (s.true_positives, s.false_positives, s.false_negatives) == (1, 0, 0)


def test_below_threshold():
    s = match_buildings([rec(0, rect(0, 0, 1, 1))], [rec(0, rect(0.5, 0, 1.5, 1))])
    assert (s.true_positives, s.false_positives, s.false_negatives) == (0, 1, 1)


def test_two_proposals_one_truth_takes_higher_iou():
    truth = [rec(0, rect(0, 0, 10, 10))]
    # listed low-IoU first so input order cannot explain the outcome
    proposal = [rec(1, rect(0, 0, 10, 6)), rec(2, rect(0, 0, 10, 8))]
    s = match_buildings(truth, proposal)
    assert (s.true_positives, s.false_positives, s.false_negatives) == (1, 1, 0)
    assert s.matches == [(0, 2, pytest.approx(0.8, abs=1e-15))]


def test_threshold_is_inclusive():
    # IoU exactly 0.5
    s = match_buildings([rec(0, rect(0, 0, 2, 1))], [rec(0, rect(0, 0, 1, 1))])
    assert s.true_positives == 1


def test_empty_inputs():
    assert match_buildings([], []).true_positives == 0
    s = match_buildings([rec(0, rect(0, 0, 1, 1))], [])
    assert (s.false_negatives, s.false_positives) == (1, 0)


@pytest.mark.parametrize("t", [0.0, -0.1, 1.01])
def test_threshold_range(t):
    with pytest.raises(ConfigurationError):
        match_buildings([], [], threshold=t)


def test_tie_broken_by_ids():
    truth = [rec(5, rect(0, 0, 2, 2)), rec(3, rect(0, 0, 2, 2))]
    proposal = [rec(9, rect(0, 0, 2, 2))]
    s = match_buildings(truth, proposal)
    assert s.matches[0][:2] == (3, 9)


def test_box_index_matches_brute_force():
    rng = random.Random(2)
    boxes = []
    for _ in range(300):
        x, y = rng.uniform(0, 100), rng.uniform(0, 100)
        boxes.append((x, y, x + rng.uniform(0.1, 8), y + rng.uniform(0.1, 8)))
    index = BoxIndex(boxes)
    for _ in range(100):
        x, y = rng.uniform(-5, 100), rng.uniform(-5, 100)
        q = (x, y, x + rng.uniform(0, 20), y + rng.uniform(0, 20))
        expected = [i for i, b in enumerate(boxes)
                    if b[0] <= q[2] and q[0] <= b[2] and b[1] <= q[3] and q[1] <= b[3]]
        assert index.query(q) == expected


# -- city / overall ---------------------------------------------------------------


def test_score_city_examples():
    perfect = score_city([SceneScore("a", 4, 0, 0), SceneScore("b", 6, 0, 0)])
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)
    c = score_city([SceneScore("a", 6, 2, 6)])
    assert (c.precision, c.recall) == (0.75, 0.5)
    assert c.f1 == pytest.approx(0.6, abs=1e-15)


def test_score_city_sums_counts_rather_than_averaging_scenes():
    c = score_city([SceneScore("a", 1, 0, 0), SceneScore("b", 0, 0, 3)])
    assert c.recall == 0.25


def test_score_city_zero_denominators():
    c = score_city([SceneScore("a", 0, 0, 0)])
    assert (c.precision, c.recall, c.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        score_city([])


@pytest.mark.parametrize("x", [0.1, 0.5, 0.93])
def test_f1_of_equal_parts(x):
    assert f1_score(x, x) == pytest.approx(x, abs=1e-15)


def test_overall_table_rows():
    assert overall_buildings_score([0.89, 0.75, 0.60, 0.54]) == pytest.approx(0.695, abs=1e-12)
    assert abs(overall_buildings_score([0.89, 0.75, 0.60, 0.54]) - 0.69) <= 0.01
    assert overall_buildings_score([0.83, 0.68, 0.58, 0.48]) == pytest.approx(0.6425, abs=1e-12)
    assert overall_buildings_score([CityScore("x", 1, 1, 0.42, 0, 0, 0)]) == 0.42
    with pytest.raises(ConfigurationError):
        overall_buildings_score([])


# -- properties --------------------------------------------------------------------


def _jittered(rng, records, n_extra):
    out = []
    for r in records:
        if rng.random() < 0.8:
            x0, y0, x1, y1 = r.footprint.bounds
            d = lambda: rng.uniform(-2.0, 2.0)
            out.append(BuildingRecord(r.building_id, rect(x0 + d(), y0 + d(), x1 + d() + 4, y1 + d() + 4)))
    for k in range(n_extra):
        x, y = rng.uniform(0, 190), rng.uniform(0, 190)
        out.append(BuildingRecord(100 + k, rect(x, y, x + rng.uniform(3, 15), y + rng.uniform(3, 15))))
    return out


def _scene(seed, n_truth, n_extra=2):
    rng = random.Random(seed)
    truth = synth.random_scene(rng, n_truth)
    return truth, _jittered(rng, truth, n_extra)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 12))
def test_permutation_invariance(seed, n):
    truth, proposal = _scene(seed, n)
    rng = random.Random(seed + 1)
    base = match_buildings(truth, proposal)
    t2, p2 = truth[:], proposal[:]
    rng.shuffle(t2)
    rng.shuffle(p2)
    again = match_buildings(t2, p2)
    assert sorted(again.matches) == sorted(base.matches)
    assert again.true_positives == base.true_positives


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 12))
def test_count_identities(seed, n):
    truth, proposal = _scene(seed, n)
    s = match_buildings(truth, proposal)
    assert s.true_positives <= min(len(truth), len(proposal))
    assert s.true_positives + s.false_negatives == len(truth)
    assert s.true_positives + s.false_positives == len(proposal)
    assert s.true_positives == len(s.matches)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 10))
def test_threshold_monotonicity(seed, n):
    truth, proposal = _scene(seed, n)
    tps = [match_buildings(truth, proposal, t).true_positives for t in np.arange(0.3, 0.91, 0.05)]
    assert all(a >= b for a, b in zip(tps, tps[1:]))


def _shapely_iou_matrix(truth, proposal):
    m = np.zeros((len(truth), len(proposal)))
    for i, t in enumerate(truth):
        a = sg.Polygon(t.footprint.exterior)
        for j, p in enumerate(proposal):
            b = sg.Polygon(p.footprint.exterior)
            inter = a.intersection(b).area
            m[i, j] = inter / (a.area + b.area - inter)
    return m


def test_greedy_against_optimal_assignment():
    gaps = 0
    for seed in range(150):
        rng = random.Random(seed)
        truth, proposal = _scene(seed, rng.randint(1, 6), n_extra=rng.randint(0, 2))
        if len(proposal) > 8 or len(truth) > 8:
            continue
        s = match_buildings(truth, proposal)
        best = brute_force_max_matches(_shapely_iou_matrix(truth, proposal), 0.5)
        assert s.true_positives >= best - 1
        gaps += s.true_positives != best
    # at IoU >= 0.5 a footprint overlaps at most one other disjoint footprint that well,
    # so greedy is optimal on these scenes
    assert gaps == 0


def test_scene_iou_agrees_with_shapely():
    truth, proposal = _scene(42, 10)
    ref = _shapely_iou_matrix(truth, proposal)
    for t_id, p_id, value in match_buildings(truth, proposal).matches:
        i = next(k for k, r in enumerate(truth) if r.building_id == t_id)
        j = next(k for k, r in enumerate(proposal) if r.building_id == p_id)
        assert value == pytest.approx(ref[i, j], abs=1e-12)
