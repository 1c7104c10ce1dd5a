"""Building obstacles and line-of-sight classification of radio links.

Buildings are axis-aligned rectangles. A link between a transmitter and a
receiver is *out of range* beyond the transmission radius, *shadowed* when
a building cuts the straight path or the path passes closer to a building
than the clearance margin, and *clear* otherwise. The clearance margin is
the uncertain band around a building; it is folded into the shadowed class.

The scalar functions are the reference API. :class:`ObstacleArray` holds
the same rectangles as arrays for the per-frame hot path and must agree
with the scalar functions exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

from .errors import ConfigError, InvalidInputError


class Point(NamedTuple):
    x: float
    y: float


class RegionClass(IntEnum):
    CLEAR = 0
    SHADOWED = 1
    OUT_OF_RANGE = 2


@dataclass(frozen=True)
class Obstacle:
    min_corner: Point
    max_corner: Point

    def __post_init__(self):
        lo, hi = Point(*self.min_corner), Point(*self.max_corner)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if not all(math.isfinite(v) for v in (*lo, *hi)):
            raise InvalidInputError("obstacle corners must be finite")
        if not (lo.x < hi.x and lo.y < hi.y):
            raise InvalidInputError(
                f"obstacle needs min_corner < max_corner, got {tuple(lo)} / {tuple(hi)}")

    @classmethod
    def from_bounds(cls, x0, y0, x1, y1) -> "Obstacle":
        return cls(Point(x0, y0), Point(x1, y1))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (*self.min_corner, *self.max_corner)

    def contains(self, p: Point) -> bool:
        """True if ``p`` is strictly inside the rectangle."""
        return self.min_corner.x < p[0] < self.max_corner.x and \
            self.min_corner.y < p[1] < self.max_corner.y


@dataclass(frozen=True)
class LinkModel:
    t_base: float = 300.0
    clearance_delta: float = 5.0
    shadow_loss: float = 1.0

    def __post_init__(self):
        if not self.t_base > 0:
            raise ConfigError("must be > 0", "link.t_base")
        if not 0 <= self.clearance_delta < self.t_base:
            raise ConfigError("must satisfy 0 <= clearance_delta < t_base",
                              "link.clearance_delta")
        if not 0.0 <= self.shadow_loss <= 1.0:
            raise ConfigError("must be in [0, 1]", "link.shadow_loss")


def _check_segment(a, b):
    if a[0] == b[0] and a[1] == b[1]:
        raise InvalidInputError(f"degenerate segment at {tuple(a)}")


def _slab_interval(a, b, obs: Obstacle):
    """Parameter interval [t0, t1] of the infinite line a + t(b-a) inside obs."""
    t0, t1 = -math.inf, math.inf
    for p, d, lo, hi in ((a[0], b[0] - a[0], obs.min_corner.x, obs.max_corner.x),
                         (a[1], b[1] - a[1], obs.min_corner.y, obs.max_corner.y)):
        if d == 0.0:
            if p < lo or p > hi:
                return math.inf, -math.inf
            continue
        u, v = (lo - p) / d, (hi - p) / d
        if u > v:
            u, v = v, u
        t0, t1 = max(t0, u), min(t1, v)
    return t0, t1


def segment_blocked(a: Point, b: Point, obs: Obstacle) -> bool:
    """True iff the open segment (a, b) meets the closed rectangle ``obs``."""
    _check_segment(a, b)
    a, b = _canonical(a, b)
    t0, t1 = _slab_interval(a, b, obs)
    lo, hi = max(t0, 0.0), min(t1, 1.0)
    return lo <= hi and lo < 1.0 and hi > 0.0


def _point_rect_distance(p, obs: Obstacle) -> float:
    dx = max(obs.min_corner.x - p[0], 0.0, p[0] - obs.max_corner.x)
    dy = max(obs.min_corner.y - p[1], 0.0, p[1] - obs.max_corner.y)
    return math.hypot(dx, dy)


def _point_segment_distance(p, a, b) -> float:
    ex, ey = b[0] - a[0], b[1] - a[1]
    t = ((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / (ex * ex + ey * ey)
    t = min(1.0, max(0.0, t))
    return math.hypot(a[0] + t * ex - p[0], a[1] + t * ey - p[1])


def min_clearance(a: Point, b: Point, obs: Obstacle) -> float:
    """Smallest distance between segment (a, b) and a building it does not cut.

    For two disjoint convex sets the minimum is attained at a vertex of one
    of them, so checking both segment endpoints against the rectangle and
    the four corners against the segment is exact.
    """
    _check_segment(a, b)
    a, b = _canonical(a, b)
    x0, y0 = obs.min_corner
    x1, y1 = obs.max_corner
    best = min(_point_rect_distance(a, obs), _point_rect_distance(b, obs))
    for c in ((x0, y0), (x0, y1), (x1, y0), (x1, y1)):
        best = min(best, _point_segment_distance(c, a, b))
    return best


def _canonical(a, b):
    # fixed endpoint order makes every test exactly symmetric in (a, b)
    return (a, b) if (a[0], a[1]) <= (b[0], b[1]) else (b, a)


def classify_link(tx: Point, rx: Point, obstacles: Sequence[Obstacle],
                  lm: LinkModel) -> RegionClass:
    _check_segment(tx, rx)
    if math.hypot(rx[0] - tx[0], rx[1] - tx[1]) > lm.t_base:
        return RegionClass.OUT_OF_RANGE
    for obs in obstacles:
        if segment_blocked(tx, rx, obs):
            return RegionClass.SHADOWED
        if lm.clearance_delta > 0 and min_clearance(tx, rx, obs) < lm.clearance_delta:
            return RegionClass.SHADOWED
    return RegionClass.CLEAR


def shadow_fraction(v: Point, neighbors: Iterable[Point], obstacles: Sequence[Obstacle],
                    lm: LinkModel) -> float:
    """Fraction of in-range neighbour links that are shadowed (1.0 if none in range)."""
    in_range = shadowed = 0
    for n in neighbors:
        if n[0] == v[0] and n[1] == v[1]:
            continue
        cls = classify_link(v, n, obstacles, lm)
        if cls is RegionClass.OUT_OF_RANGE:
            continue
        in_range += 1
        shadowed += cls is RegionClass.SHADOWED
    return 1.0 if in_range == 0 else shadowed / in_range


@numba.njit(cache=True)
def _classify_kernel(ax, ay, bx, by, xmin, ymin, xmax, ymax, t_base, delta):
    m = ax.shape[0]
    out = np.full(m, 2, dtype=np.int8)
    inf = np.inf
    for i in range(m):
        px, py, qx, qy = ax[i], ay[i], bx[i], by[i]
        d = math.hypot(qx - px, qy - py)
        if not (d <= t_base and d > 0.0):
            continue
        if (px, py) > (qx, qy):
            px, py, qx, qy = qx, qy, px, py
        lox, hix = min(px, qx), max(px, qx)
        loy, hiy = min(py, qy), max(py, qy)
        ex, ey = qx - px, qy - py
        den = ex * ex + ey * ey
        cls = 0
        for k in range(xmin.shape[0]):
            x0, y0, x1, y1 = xmin[k], ymin[k], xmax[k], ymax[k]
            if x0 - hix > delta or lox - x1 > delta or y0 - hiy > delta or loy - y1 > delta:
                continue
            # slab test on the canonical segment
            t0, t1 = -inf, inf
            hit = True
            for axis in range(2):
                if axis == 0:
                    p, dd, lo, hi = px, ex, x0, x1
                else:
                    p, dd, lo, hi = py, ey, y0, y1
                if dd == 0.0:
                    if p < lo or p > hi:
                        hit = False
                        break
                    continue
                u, v = (lo - p) / dd, (hi - p) / dd
                if u > v:
                    u, v = v, u
                t0, t1 = max(t0, u), min(t1, v)
            if hit:
                lo_t, hi_t = max(t0, 0.0), min(t1, 1.0)
                if lo_t <= hi_t and lo_t < 1.0 and hi_t > 0.0:
                    cls = 1
                    break
            if delta > 0.0:
                best = math.hypot(max(max(x0 - px, 0.0), px - x1), max(max(y0 - py, 0.0), py - y1))
                best = min(best, math.hypot(max(max(x0 - qx, 0.0), qx - x1),
                                            max(max(y0 - qy, 0.0), qy - y1)))
                for c in range(4):
                    cx = x0 if c < 2 else x1
                    cy = y0 if c % 2 == 0 else y1
                    t = ((cx - px) * ex + (cy - py) * ey) / den
                    t = min(1.0, max(0.0, t))
                    best = min(best, math.hypot(px + t * ex - cx, py + t * ey - cy))
                if best < delta:
                    cls = 1
                    break
        out[i] = cls
    return out


class ObstacleArray:
    """Array view of an obstacle list for many-link classification.

    Runs the same arithmetic as :func:`classify_link` in a compiled loop.
    """

    def __init__(self, obstacles: Sequence[Obstacle]):
        self.obstacles = tuple(obstacles)
        b = np.array([o.bounds for o in self.obstacles], dtype=float).reshape(-1, 4)
        self.xmin, self.ymin, self.xmax, self.ymax = (np.ascontiguousarray(c) for c in b.T)

    def __len__(self):
        return len(self.obstacles)

    def classify_pairs(self, a: np.ndarray, b: np.ndarray, lm: LinkModel) -> np.ndarray:
        """Classify links a[i] -> b[i]; returns int8 codes of :class:`RegionClass`.

        Rows containing NaN (absent nodes) and zero-length links come back
        OUT_OF_RANGE.
        """
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape != b.shape:
            a, b = np.broadcast_arrays(a, b)
        return _classify_kernel(np.ascontiguousarray(a[:, 0]), np.ascontiguousarray(a[:, 1]),
                                np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]),
                                self.xmin, self.ymin, self.xmax, self.ymax,
                                float(lm.t_base), float(lm.clearance_delta))

    def classify_from(self, tx, rx: np.ndarray, lm: LinkModel) -> np.ndarray:
        return self.classify_pairs(np.asarray(tx, dtype=float)[None, :], rx, lm)
