from __future__ import annotations

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, assume
from hypothesis import strategies as st

from urbanvanet.errors import ConfigError, InvalidInputError
from urbanvanet.geometry import (LinkModel, Obstacle, ObstacleArray, Point, RegionClass,
                                 classify_link, min_clearance, segment_blocked, shadow_fraction)

from oracles import boundary_gap, dense_blocked, dense_distance

R = Obstacle.from_bounds
coord = st.floats(-500, 500, allow_nan=False, allow_infinity=False)


@st.composite
def rects(draw):
    x, y = draw(coord), draw(coord)
    w = draw(st.floats(0.5, 200))
    h = draw(st.floats(0.5, 200))
    return R(x, y, x + w, y + h)


@st.composite
def segments(draw):
    a = Point(draw(coord), draw(coord))
    b = Point(draw(coord), draw(coord))
    assume(math.hypot(b.x - a.x, b.y - a.y) > 1e-3)
    return a, b


def test_obstacle_needs_positive_area():
    with pytest.raises(InvalidInputError):
        R(0, 0, 0, 10)
    with pytest.raises(InvalidInputError):
        R(0, 0, 10, -1)
    with pytest.raises(InvalidInputError):
        R(0, 0, math.inf, 1)


def test_link_model_invariants():
    with pytest.raises(ConfigError):
        LinkModel(t_base=0)
    with pytest.raises(ConfigError):
        LinkModel(t_base=10, clearance_delta=10)
    with pytest.raises(ConfigError):
        LinkModel(clearance_delta=-1)


@pytest.mark.parametrize("a,b,rect,want", [
    ((0, 0), (100, 0), (40, -10, 60, 10), True),
    ((0, 0), (100, 0), (200, 200, 210, 210), False),
    ((0, 0), (0, 100), (10, 10, 20, 20), False),
])
def test_segment_blocked_examples(a, b, rect, want):
    assert segment_blocked(Point(*a), Point(*b), R(*rect)) is want
    assert dense_blocked(a, b, rect) is want


def test_degenerate_segment_rejected():
    with pytest.raises(InvalidInputError):
        segment_blocked(Point(1, 1), Point(1, 1), R(0, 0, 2, 2))
    with pytest.raises(InvalidInputError):
        classify_link(Point(1, 1), Point(1, 1), [], LinkModel())


@pytest.mark.parametrize("a,b,rect,want", [
    ((0, 0), (100, 0), (40, 5, 60, 15), 5.0),
    ((0, 0), (100, 0), (40, 100, 60, 110), 100.0),
])
def test_min_clearance_examples(a, b, rect, want):
    assert min_clearance(Point(*a), Point(*b), R(*rect)) == pytest.approx(want, abs=1e-12)
    assert dense_distance(a, b, rect) == pytest.approx(want, abs=1e-6)


def test_min_clearance_far_obstacle():
    assert min_clearance(Point(0, 0), Point(1, 0), R(1000, 1000, 1001, 1001)) >= 1000


@pytest.mark.parametrize("tx,rx,obs,delta,want", [
    ((0, 0), (400, 0), [], 5.0, RegionClass.OUT_OF_RANGE),
    ((0, 0), (100, 0), [], 5.0, RegionClass.CLEAR),
    ((0, 0), (100, 0), [(40, -10, 60, 10)], 0.0, RegionClass.SHADOWED),
    ((0, 0), (100, 0), [(40, -10, 60, 10)], 5.0, RegionClass.SHADOWED),
    ((0, 0), (100, 0), [(40, 3, 60, 13)], 5.0, RegionClass.SHADOWED),
    ((0, 0), (100, 0), [(40, 3, 60, 13)], 2.0, RegionClass.CLEAR),
])
def test_classify_link_examples(tx, rx, obs, delta, want):
    lm = LinkModel(t_base=300.0, clearance_delta=delta)
    assert classify_link(Point(*tx), Point(*rx), [R(*o) for o in obs], lm) is want


def test_endpoint_inside_obstacle_is_shadowed():
    assert classify_link(Point(5, 5), Point(50, 5), [R(0, 0, 10, 10)],
                         LinkModel()) is RegionClass.SHADOWED


@pytest.mark.parametrize("n_blocked,want", [(0, 0.0), (3, 0.75)])
def test_shadow_fraction_examples(n_blocked, want):
    v = Point(0, 0)
    nbrs = [Point(100, 0), Point(-100, 0), Point(0, 100), Point(0, -100)]
    walls = [R(40, -10, 60, 10), R(-60, -10, -40, 10), R(-10, 40, 10, 60)][:n_blocked]
    assert shadow_fraction(v, nbrs, walls, LinkModel()) == want


def test_shadow_fraction_without_neighbours_is_worst_case():
    assert shadow_fraction(Point(0, 0), [], [], LinkModel()) == 1.0
    assert shadow_fraction(Point(0, 0), [Point(1000, 0)], [], LinkModel()) == 1.0


def test_geometry_oracle_1000_cases():
    """classify_link against dense point sampling on randomised cases."""
    rng = np.random.default_rng(20240601)
    lm = LinkModel(t_base=300.0, clearance_delta=0.0)
    t0 = time.perf_counter()
    disagreements = checked = 0
    for _ in range(1000):
        a = rng.uniform(-300, 300, 2)
        b = a + rng.uniform(-250, 250, 2)
        x0, y0 = rng.uniform(-300, 300, 2)
        rect = (x0, y0, x0 + rng.uniform(1, 150), y0 + rng.uniform(1, 150))
        if boundary_gap(a, b, rect) < 1e-6:
            continue
        checked += 1
        cls = classify_link(Point(*a), Point(*b), [R(*rect)], lm)
        in_range = math.hypot(*(b - a)) <= lm.t_base
        want = (RegionClass.OUT_OF_RANGE if not in_range else
                RegionClass.SHADOWED if dense_blocked(a, b, rect) else RegionClass.CLEAR)
        disagreements += cls is not want
    elapsed = time.perf_counter() - t0
    assert checked > 990
    assert disagreements == 0
    assert elapsed < 5.0


@settings(max_examples=300, deadline=None)
@given(segments(), rects())
def test_segment_blocked_matches_sampling(seg, rect):
    a, b = seg
    assume(boundary_gap(a, b, rect.bounds) > 0.05)
    assert segment_blocked(a, b, rect) == dense_blocked(a, b, rect.bounds)


@settings(max_examples=200, deadline=None)
@given(segments(), rects())
def test_min_clearance_matches_sampling(seg, rect):
    a, b = seg
    assume(not segment_blocked(a, b, rect))
    exact = min_clearance(a, b, rect)
    approx = dense_distance(a, b, rect.bounds, samples=20_001)
    step = math.hypot(b.x - a.x, b.y - a.y) / 20_000
    assert exact <= approx + 1e-9
    assert approx - exact <= step


@settings(max_examples=200, deadline=None)
@given(segments(), st.lists(rects(), max_size=4), st.floats(0, 20))
def test_classify_link_symmetric(seg, obs, delta):
    a, b = seg
    lm = LinkModel(clearance_delta=delta)
    assert classify_link(a, b, obs, lm) is classify_link(b, a, obs, lm)


@settings(max_examples=200, deadline=None)
@given(segments(), st.lists(rects(), max_size=3), rects(), st.floats(0, 20))
def test_adding_obstacle_never_clears(seg, obs, extra, delta):
    a, b = seg
    lm = LinkModel(clearance_delta=delta)
    if classify_link(a, b, obs, lm) is RegionClass.SHADOWED:
        assert classify_link(a, b, obs + [extra], lm) is RegionClass.SHADOWED


@settings(max_examples=200, deadline=None)
@given(segments(), st.lists(rects(), max_size=3), st.floats(0, 20), st.floats(0, 20))
def test_wider_band_never_clears(seg, obs, d1, d2):
    a, b = seg
    lo, hi = sorted((d1, d2))
    if classify_link(a, b, obs, LinkModel(clearance_delta=lo)) is RegionClass.SHADOWED:
        assert classify_link(a, b, obs, LinkModel(clearance_delta=hi)) is RegionClass.SHADOWED


@settings(max_examples=200, deadline=None)
@given(segments(), st.floats(1, 800))
def test_no_obstacles_is_disk_test(seg, t_base):
    a, b = seg
    lm = LinkModel(t_base=t_base, clearance_delta=0.0)
    inside = math.hypot(b.x - a.x, b.y - a.y) <= t_base
    assert classify_link(a, b, [], lm) is (RegionClass.CLEAR if inside else RegionClass.OUT_OF_RANGE)


def test_array_kernel_agrees_with_scalar_reference():
    rng = np.random.default_rng(5)
    obs = [R(x, y, x + w, y + h) for x, y, w, h in
           zip(rng.uniform(-400, 400, 12), rng.uniform(-400, 400, 12),
               rng.uniform(5, 120, 12), rng.uniform(5, 120, 12))]
    arr = ObstacleArray(obs)
    lm = LinkModel()
    a = rng.uniform(-500, 500, (3000, 2))
    b = a + rng.uniform(-320, 320, (3000, 2))
    got = arr.classify_pairs(a, b, lm)
    want = [classify_link(Point(*p), Point(*q), obs, lm) for p, q in zip(a, b)]
    assert [RegionClass(int(g)) for g in got] == want
    tx = Point(0.0, 0.0)
    from_tx = arr.classify_from(tx, b, lm)
    assert [RegionClass(int(g)) for g in from_tx] == [
        classify_link(tx, Point(*q), obs, lm) for q in b]
