from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanvanet.errors import ConfigError, OutOfSpanError, TraceParseError, TraceValidationError
from urbanvanet.geometry import Point
from urbanvanet.mobility import (MPH, GridSpec, Trace, TraceSample, format_trace,
                                 generate_grid_scenario, grid_rsus, is_bus, load_trace,
                                 parse_trace, write_trace)

HEADER = "time_s,vehicle_id,x_m,y_m,speed_mps\n"


def test_grid_spec_invariants():
    with pytest.raises(ConfigError):
        GridSpec(road_length=0)
    with pytest.raises(ConfigError):
        GridSpec(lanes=0)
    with pytest.raises(ConfigError):
        GridSpec(speed_min=10, speed_max=5)
    with pytest.raises(ConfigError):
        GridSpec(n_vehicles=-1)
    with pytest.raises(ConfigError):
        GridSpec(building_fraction=1.5)


def test_grid_covers_the_road_length():
    spec = GridSpec()
    nx, ny = spec.blocks
    total = (nx * (ny + 1) + ny * (nx + 1)) * spec.block_size
    assert abs(total - spec.road_length) <= 2 * (nx + ny) * spec.block_size


def test_no_vehicles_still_has_buildings():
    spec = GridSpec(n_vehicles=0, n_buses=0, horizon=5)
    samples, obstacles = generate_grid_scenario(spec, 1)
    assert samples == []
    assert obstacles


def test_generation_is_deterministic():
    spec = GridSpec(n_vehicles=20, horizon=10)
    a = generate_grid_scenario(spec, 7)
    b = generate_grid_scenario(spec, 7)
    assert format_trace(a[0]) == format_trace(b[0])
    assert a[1] == b[1]
    c = generate_grid_scenario(spec, 8)
    assert format_trace(c[0]) != format_trace(a[0])


def test_speeds_within_configured_band():
    spec = GridSpec(n_vehicles=60, horizon=5, speed_min=13.4, speed_max=22.4)
    samples, _ = generate_grid_scenario(spec, 3)
    speeds = [s.speed for s in samples if not is_bus(s.vehicle_id)]
    assert speeds and all(13.4 <= v <= 22.4 for v in speeds)


def test_default_speeds_are_30_to_50_mph():
    spec = GridSpec()
    assert spec.speed_min == pytest.approx(30 * MPH)
    assert spec.speed_max == pytest.approx(50 * MPH)


def test_bus_fleet_and_rsus():
    spec = GridSpec(n_vehicles=10, n_buses=4, horizon=5)
    samples, _ = generate_grid_scenario(spec, 2)
    buses = {s.vehicle_id for s in samples if is_bus(s.vehicle_id)}
    assert len(buses) == 4
    assert GridSpec(n_vehicles=200, n_buses=None, vehicles_per_bus=50).bus_count == 4
    rsus = grid_rsus(spec)
    b = spec.block_size
    assert rsus and all(p.x % b == 0 and p.y % b == 0 for p in rsus)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_positions_stay_on_streets(seed, fraction):
    spec = GridSpec(n_vehicles=15, n_buses=3, horizon=20, building_fraction=fraction)
    samples, obstacles = generate_grid_scenario(spec, seed)
    trace = Trace(samples)
    for vid in {s.vehicle_id for s in samples}:
        for t in np.linspace(0, 20, 41):
            p = trace.position_at(vid, float(t))
            assert not any(o.contains(p) for o in obstacles)


def test_parse_row_maps_fields():
    samples = parse_trace(HEADER + "1.0,v1,10.0,20.0,15.0\n")
    assert samples == [TraceSample(1.0, "v1", Point(10.0, 20.0), 15.0)]


def test_header_only_is_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER)
    assert load_trace(p) == []


@pytest.mark.parametrize("body,err", [
    ("1.0,v1,10.0,20.0,15.0\n1.0,v1,11.0,20.0,15.0\n", TraceValidationError),
    ("2.0,v1,10.0,20.0,15.0\n1.0,v1,11.0,20.0,15.0\n", TraceValidationError),
    ("1.0,v1,abc,20.0,15.0\n", TraceParseError),
    ("1.0,v1,10.0\n", TraceParseError),
    ("-1.0,v1,10.0,20.0,15.0\n", TraceValidationError),
])
def test_bad_rows_are_rejected(body, err):
    with pytest.raises(err):
        parse_trace(HEADER + body)


def test_parse_error_carries_line_number():
    with pytest.raises(TraceParseError) as e:
        parse_trace(HEADER + "0.0,v1,1,1,1\n1.0,v1,x,1,1\n")
    assert e.value.line == 3


def test_missing_header_rejected():
    with pytest.raises(TraceParseError):
        parse_trace("1.0,v1,10.0,20.0,15.0\n")


def test_interpolation():
    tr = Trace(parse_trace(HEADER + "0,v1,0,0,10\n10,v1,100,0,10\n"))
    assert tr.position_at("v1", 5.0) == Point(50.0, 0.0)
    assert tr.position_at("v1", 0.0) == Point(0.0, 0.0)
    with pytest.raises(OutOfSpanError):
        tr.position_at("v1", 11.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4)), min_size=2, max_size=6),
       st.floats(0, 1))
def test_interpolated_point_inside_bracketing_box(pts, frac):
    rows = "".join(f"{k}.0,v1,{x!r},{y!r},1.0\n" for k, (x, y) in enumerate(pts))
    tr = Trace(parse_trace(HEADER + rows))
    t = frac * (len(pts) - 1)
    k = min(int(t), len(pts) - 2)
    p = tr.position_at("v1", t)
    (x0, y0), (x1, y1) = pts[k], pts[k + 1]
    eps = 1e-9 * (1 + abs(x0) + abs(x1) + abs(y0) + abs(y1))
    assert min(x0, x1) - eps <= p.x <= max(x0, x1) + eps
    assert min(y0, y1) - eps <= p.y <= max(y0, y1) + eps


def test_trace_csv_round_trip(tmp_path):
    spec = GridSpec(n_vehicles=5, n_buses=1, horizon=4)
    samples, _ = generate_grid_scenario(spec, 9)
    p = tmp_path / "trace.csv"
    write_trace(p, samples)
    raw = p.read_bytes()
    assert raw.startswith(HEADER.encode()) and b"\r" not in raw
    again = load_trace(p)
    assert format_trace(again) == raw.decode()
    first = raw.decode().splitlines()[1].split(",")
    assert len(first[0].split(".")[1]) >= 3
