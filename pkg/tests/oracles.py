"""Independent reference computations the tests compare against."""

from __future__ import annotations

import itertools
import math

import numpy as np


def dense_blocked(a, b, rect, samples: int = 10_000) -> bool:
    """Any of ``samples`` evenly spaced interior points inside the closed rectangle."""
    x0, y0, x1, y1 = rect
    t = (np.arange(samples) + 0.5) / samples
    xs = a[0] + t * (b[0] - a[0])
    ys = a[1] + t * (b[1] - a[1])
    return bool(np.any((xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)))


def dense_distance(a, b, rect, samples: int = 10_000) -> float:
    """Smallest point-to-rectangle distance over points sampled along the segment."""
    x0, y0, x1, y1 = rect
    t = np.linspace(0.0, 1.0, samples)
    xs = a[0] + t * (b[0] - a[0])
    ys = a[1] + t * (b[1] - a[1])
    dx = np.maximum.reduce([x0 - xs, np.zeros_like(xs), xs - x1])
    dy = np.maximum.reduce([y0 - ys, np.zeros_like(ys), ys - y1])
    return float(np.min(np.hypot(dx, dy)))


def boundary_gap(a, b, rect, samples: int = 10_000) -> float:
    """How far the sampled segment stays from the rectangle's boundary line.

    Small values mean the segment grazes an edge or corner, where a finite
    sampling oracle cannot be trusted.
    """
    x0, y0, x1, y1 = rect
    t = np.linspace(0.0, 1.0, samples)
    xs = a[0] + t * (b[0] - a[0])
    ys = a[1] + t * (b[1] - a[1])
    inside = (xs > x0) & (xs < x1) & (ys > y0) & (ys < y1)
    dx = np.maximum.reduce([x0 - xs, np.zeros_like(xs), xs - x1])
    dy = np.maximum.reduce([y0 - ys, np.zeros_like(ys), ys - y1])
    outside = np.hypot(dx, dy)
    depth = np.minimum.reduce([xs - x0, x1 - xs, ys - y0, y1 - ys])
    return float(np.max(depth[inside])) if inside.any() else float(np.min(outside))


def exhaustive_max_coverage(cover: np.ndarray, k_max: int) -> int:
    """Best number of covered columns over all subsets of at most k_max rows."""
    cover = np.asarray(cover, dtype=bool)
    n_rows = cover.shape[0]
    best = 0
    for k in range(1, min(k_max, n_rows) + 1):
        for rows in itertools.combinations(range(n_rows), k):
            best = max(best, int(cover[list(rows)].any(axis=0).sum()))
    return best


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="mergesort")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0
            i = j + 1
        return r
    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float((rx ** 2).sum() * (ry ** 2).sum()))
    return 0.0 if den == 0 else float((rx * ry).sum() / den)
