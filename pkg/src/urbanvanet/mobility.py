"""Vehicle movement: a synthetic Manhattan grid generator and a CSV trace reader.

Trace CSV schema (UTF-8, LF line endings)::

    time_s,vehicle_id,x_m,y_m,speed_mps

Vehicle ids starting with ``bus`` are mobile gateways; every other id is an
ordinary car. Positions between samples are linearly interpolated.
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_right
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, OutOfSpanError, TraceParseError, TraceValidationError
from .geometry import Obstacle, Point
from .rng import substream

TRACE_HEADER = ("time_s", "vehicle_id", "x_m", "y_m", "speed_mps")
BUS_PREFIX = "bus"
MPH = 0.44704

# heading -> unit vector; right-hand traffic keeps vehicles on the right of
# the centreline, i.e. offset along (dy, -dx)
_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))


class TraceSample(NamedTuple):
    time: float
    vehicle_id: str
    pos: Point
    speed: float


def is_bus(vehicle_id: str) -> bool:
    return vehicle_id.startswith(BUS_PREFIX)


@dataclass(frozen=True)
class GridSpec:
    road_length: float = 10_000.0
    block_size: float = 200.0
    lanes: int = 3
    lane_width: float = 3.5
    sidewalk: float = 5.0
    speed_min: float = 30 * MPH
    speed_max: float = 50 * MPH
    n_vehicles: int = 50
    # None -> fleet sized by vehicles_per_bus
    n_buses: int | None = 20
    vehicles_per_bus: int = 50
    bus_speed: float | None = None
    # None -> one RSU per lattice point at rsu_spacing
    n_rsus: int | None = None
    rsu_spacing: float = 400.0
    building_fraction: float = 0.5
    horizon: float = 200.0
    sample_interval: float = 1.0

    def __post_init__(self):
        checks = [
            (self.road_length > 0, "road_length", "must be > 0"),
            (self.block_size > 0, "block_size", "must be > 0"),
            (self.lanes >= 1, "lanes", "must be >= 1"),
            (self.lane_width > 0, "lane_width", "must be > 0"),
            (self.sidewalk >= 0, "sidewalk", "must be >= 0"),
            (0 < self.speed_min <= self.speed_max, "speed_min",
             "must satisfy 0 < speed_min <= speed_max"),
            (self.n_vehicles >= 0, "n_vehicles", "must be >= 0"),
            (self.n_buses is None or self.n_buses >= 0, "n_buses", "must be >= 0"),
            (self.vehicles_per_bus >= 1, "vehicles_per_bus", "must be >= 1"),
            (self.bus_speed is None or self.bus_speed > 0, "bus_speed", "must be > 0"),
            (self.n_rsus is None or self.n_rsus >= 0, "n_rsus", "must be >= 0"),
            (self.rsu_spacing > 0, "rsu_spacing", "must be > 0"),
            (0.0 <= self.building_fraction <= 1.0, "building_fraction", "must be in [0, 1]"),
            (self.horizon > 0, "horizon", "must be > 0"),
            (self.sample_interval > 0, "sample_interval", "must be > 0"),
            (2 * self.street_half_width < self.block_size, "block_size",
             "must exceed the street width"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(msg, f"grid.{name}")

    @property
    def street_half_width(self) -> float:
        return self.lanes * self.lane_width + self.sidewalk

    @property
    def bus_count(self) -> int:
        if self.n_buses is not None:
            return self.n_buses
        return max(1, round(self.n_vehicles / self.vehicles_per_bus)) if self.n_vehicles else 0

    @property
    def blocks(self) -> tuple[int, int]:
        """(nx, ny) block counts whose total street length is closest to road_length."""
        best = None
        for ny in range(1, 200):
            for nx in (ny, ny + 1):
                total = self.block_size * (nx * (ny + 1) + ny * (nx + 1))
                key = (abs(total - self.road_length), nx + ny)
                if best is None or key < best[0]:
                    best = (key, (nx, ny))
            if self.block_size * ny * (ny + 1) * 2 > 2 * self.road_length:
                break
        return best[1]

    @property
    def extent(self) -> tuple[float, float]:
        nx, ny = self.blocks
        return nx * self.block_size, ny * self.block_size

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def grid_obstacles(spec: GridSpec, seed: int = 0) -> list[Obstacle]:
    nx, ny = spec.blocks
    m, b = spec.street_half_width, spec.block_size
    cells = [(i, j) for j in range(ny) for i in range(nx)]
    if spec.building_fraction < 1.0:
        rng = substream(seed, "obstacles")
        keep = rng.random(len(cells)) < spec.building_fraction
        cells = [c for c, k in zip(cells, keep) if k]
    return [Obstacle.from_bounds(i * b + m, j * b + m, (i + 1) * b - m, (j + 1) * b - m)
            for i, j in cells]


def grid_rsus(spec: GridSpec) -> list[Point]:
    nx, ny = spec.blocks
    b = spec.block_size
    step = max(1, round(spec.rsu_spacing / b))
    pts = [Point(i * b, j * b) for j in range(0, ny + 1, step) for i in range(0, nx + 1, step)]
    if spec.n_rsus is not None:
        pts = pts[:spec.n_rsus]
    return pts


def _lane_offset(heading, offset):
    dx, dy = _HEADINGS[heading]
    return dy * offset, -dx * offset


def _car_path(spec: GridSpec, rng: np.random.Generator, length: float):
    """Waypoints of a random walk along grid streets covering ``length`` metres."""
    nx, ny = spec.blocks
    b = spec.block_size
    off = (rng.integers(spec.lanes) + 0.5) * spec.lane_width
    # random street segment, direction and starting fraction
    if rng.random() < (nx * (ny + 1)) / (nx * (ny + 1) + ny * (nx + 1)):
        i, j = int(rng.integers(nx)), int(rng.integers(ny + 1))
        heading = 0 if rng.random() < 0.5 else 2
        a, c = (i, j), (i + 1, j)
    else:
        i, j = int(rng.integers(nx + 1)), int(rng.integers(ny))
        heading = 1 if rng.random() < 0.5 else 3
        a, c = (i, j), (i, j + 1)
    if heading >= 2:
        a, c = c, a
    frac = rng.random()
    ox, oy = _lane_offset(heading, off)
    start = ((a[0] + frac * (c[0] - a[0])) * b + ox, (a[1] + frac * (c[1] - a[1])) * b + oy)
    pts = [start]
    node = c
    travelled = (1 - frac) * b
    while True:
        ox, oy = _lane_offset(heading, off)
        pts.append((node[0] * b + ox, node[1] * b + oy))
        if travelled > length:
            break
        options = []
        for h in range(4):
            if h == (heading + 2) % 4:
                continue
            dx, dy = _HEADINGS[h]
            if 0 <= node[0] + dx <= nx and 0 <= node[1] + dy <= ny:
                options.append(h)
        if not options:
            options = [(heading + 2) % 4]
        if heading in options and rng.random() < 0.5:
            new = heading
        else:
            turns = [h for h in options if h != heading] or options
            new = turns[int(rng.integers(len(turns)))]
        if new != heading:
            ox, oy = _lane_offset(new, off)
            pts.append((node[0] * b + ox, node[1] * b + oy))
        heading = new
        dx, dy = _HEADINGS[heading]
        node = (node[0] + dx, node[1] + dy)
        travelled += b
    return pts


def _bus_loop(spec: GridSpec, rng: np.random.Generator):
    nx, ny = spec.blocks
    b = spec.block_size
    i0 = int(rng.integers(nx))
    i1 = int(rng.integers(i0 + 1, nx + 1))
    j0 = int(rng.integers(ny))
    j1 = int(rng.integers(j0 + 1, ny + 1))
    off = 0.5 * spec.lane_width
    corners = [(i0, j0, 0), (i1, j0, 1), (i1, j1, 2), (i0, j1, 3)]  # counter-clockwise
    loop = []
    for k, (ci, cj, h) in enumerate(corners):
        prev_h = corners[k - 1][2]
        for hh in (prev_h, h):
            ox, oy = _lane_offset(hh, off)
            loop.append((ci * b + ox, cj * b + oy))
    loop.append(loop[0])
    return loop


def _sample_path(pts, speed, times, start_offset=0.0, periodic=False):
    pts = np.asarray(pts, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = start_offset + speed * times
    if periodic:
        s = np.mod(s, cum[-1])
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def generate_grid_scenario(spec: GridSpec, seed: int) -> tuple[list[TraceSample], list[Obstacle]]:
    """Synthetic Manhattan scenario: vehicle samples plus building rectangles.

    Cars random-walk the street grid at a constant per-car speed drawn
    uniformly from [speed_min, speed_max]; buses circle fixed rectangular
    loops. Output is a pure function of ``(spec, seed)``.
    """
    rng = substream(seed, "mobility")
    n = int(math.floor(spec.horizon / spec.sample_interval + 1e-9))
    times = np.arange(n + 1) * spec.sample_interval
    if times[-1] < spec.horizon:
        times = np.append(times, spec.horizon)
    samples: list[TraceSample] = []
    width = max(4, len(str(max(spec.n_vehicles - 1, 0))))
    for k in range(spec.n_vehicles):
        speed = float(rng.uniform(spec.speed_min, spec.speed_max))
        path = _car_path(spec, rng, speed * spec.horizon + spec.block_size)
        xy = _sample_path(path, speed, times)
        vid = f"v{k:0{width}d}"
        samples.extend(TraceSample(float(t), vid, Point(float(x), float(y)), speed)
                       for t, (x, y) in zip(times, xy))
    bus_rng = substream(seed, "bus-routes")
    speed = spec.bus_speed if spec.bus_speed is not None else spec.speed_min
    for k in range(spec.bus_count):
        loop = _bus_loop(spec, bus_rng)
        perim = float(np.sum(np.hypot(*np.diff(np.asarray(loop), axis=0).T)))
        xy = _sample_path(loop, speed, times, bus_rng.uniform(0, perim), periodic=True)
        vid = f"{BUS_PREFIX}{k:03d}"
        samples.extend(TraceSample(float(t), vid, Point(float(x), float(y)), speed)
                       for t, (x, y) in zip(times, xy))
    samples.sort(key=lambda s: (s.vehicle_id, s.time))
    return samples, grid_obstacles(spec, seed)


def _parse_float(text, name, line):
    try:
        v = float(text)
    except ValueError:
        raise TraceParseError(f"{name} is not a number: {text!r}", line) from None
    if not math.isfinite(v):
        raise TraceParseError(f"{name} is not finite: {text!r}", line)
    return v


def parse_trace(text: str) -> list[TraceSample]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError("missing header", 1) from None
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceParseError(f"expected header {','.join(TRACE_HEADER)}", 1)
    samples = []
    last: dict[str, float] = {}
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 5:
            raise TraceParseError(f"expected 5 fields, got {len(row)}", line)
        t = _parse_float(row[0], "time_s", line)
        vid = row[1].strip()
        if not vid:
            raise TraceParseError("empty vehicle_id", line)
        x = _parse_float(row[2], "x_m", line)
        y = _parse_float(row[3], "y_m", line)
        speed = _parse_float(row[4], "speed_mps", line)
        if t < 0:
            raise TraceValidationError(f"line {line}: negative time {t}")
        if speed < 0:
            raise TraceValidationError(f"line {line}: negative speed {speed}")
        prev = last.get(vid)
        if prev is not None and t <= prev:
            kind = "duplicate" if t == prev else "non-monotone"
            raise TraceValidationError(f"line {line}: {kind} timestamp {t} for {vid}")
        last[vid] = t
        samples.append(TraceSample(t, vid, Point(x, y), speed))
    samples.sort(key=lambda s: (s.vehicle_id, s.time))
    return samples


def load_trace(path) -> list[TraceSample]:
    return parse_trace(Path(path).read_text(encoding="utf-8"))


def format_trace(samples: Iterable[TraceSample]) -> str:
    out = [",".join(TRACE_HEADER)]
    for s in samples:
        out.append(f"{s.time:.6f},{s.vehicle_id},{s.pos[0]:.6f},{s.pos[1]:.6f},{s.speed:.6f}")
    return "\n".join(out) + "\n"


def write_trace(path, samples: Iterable[TraceSample]) -> None:
    Path(path).write_text(format_trace(samples), encoding="utf-8", newline="\n")


class Trace:
    """Immutable per-vehicle sample arrays with interpolated lookups."""

    def __init__(self, samples: Iterable[TraceSample]):
        per: dict[str, list[TraceSample]] = {}
        for s in samples:
            per.setdefault(s.vehicle_id, []).append(s)
        self.vehicle_ids: tuple[str, ...] = tuple(sorted(per))
        self._t = {}
        self._xy = {}
        for vid in self.vehicle_ids:
            rows = sorted(per[vid], key=lambda s: s.time)
            t = np.array([r.time for r in rows])
            if np.any(np.diff(t) <= 0):
                raise TraceValidationError(f"timestamps for {vid} are not strictly increasing")
            self._t[vid] = t
            self._xy[vid] = np.array([r.pos for r in rows], dtype=float)
        self._dense = None

    def __len__(self):
        return len(self.vehicle_ids)

    def span(self, vehicle_id: str) -> tuple[float, float]:
        t = self._t[vehicle_id]
        return float(t[0]), float(t[-1])

    def position_at(self, vehicle_id: str, t: float) -> Point:
        try:
            ts = self._t[vehicle_id]
        except KeyError:
            raise OutOfSpanError(f"unknown vehicle {vehicle_id!r}") from None
        if t < ts[0] or t > ts[-1]:
            raise OutOfSpanError(f"t={t} outside span [{ts[0]}, {ts[-1]}] of {vehicle_id}")
        xy = self._xy[vehicle_id]
        k = bisect_right(ts, t) - 1
        if ts[k] == t:
            return Point(float(xy[k, 0]), float(xy[k, 1]))
        f = (t - ts[k]) / (ts[k + 1] - ts[k])
        p = xy[k] + f * (xy[k + 1] - xy[k])
        return Point(float(p[0]), float(p[1]))

    def densify(self, dt: float, t_end: float) -> "DenseTrace":
        n = int(math.ceil(t_end / dt - 1e-9)) + 1
        grid = np.arange(n + 1) * dt
        out = np.full((grid.size, len(self.vehicle_ids), 2), np.nan)
        for k, vid in enumerate(self.vehicle_ids):
            ts, xy = self._t[vid], self._xy[vid]
            inside = (grid >= ts[0]) & (grid <= ts[-1])
            out[inside, k, 0] = np.interp(grid[inside], ts, xy[:, 0])
            out[inside, k, 1] = np.interp(grid[inside], ts, xy[:, 1])
        return DenseTrace(dt, out)


class DenseTrace:
    """Positions of every vehicle on a uniform time grid (NaN when absent)."""

    def __init__(self, dt: float, grid: np.ndarray):
        self.dt = dt
        self.grid = grid
        self._memo_t = None
        self._memo = None

    def positions_at(self, t: float) -> np.ndarray:
        if t == self._memo_t:
            return self._memo
        u = t / self.dt
        k = min(int(u), self.grid.shape[0] - 2)
        f = u - k
        a = self.grid[k]
        out = a if f == 0.0 else a + f * (self.grid[k + 1] - a)
        self._memo_t, self._memo = t, out
        return out
