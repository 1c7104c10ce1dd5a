"""Per-run metrics and cross-seed aggregation.

A *record* is one (message, intended target) pair. Delay and delivery are
computed over records; the collision ratio comes from the channel's
reception tallies, with reception opportunities (delivered + collided +
shadow-blocked data receptions) as the denominator.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

DELIVERED = "Delivered"
UNDELIVERED = "Undelivered"

METRIC_FILES = {
    "mean_e2e_delay": "delay.csv",
    "delivery_probability": "delivery.csv",
    "collision_ratio": "collision.csv",
    "avg_throughput": "throughput.csv",
}
COLLISION_NOTE = "collision_ratio = collided / (delivered + collided + shadow_blocked) receptions"


@dataclass(frozen=True)
class MetricsRecord:
    message_id: int
    source: str
    target: str
    outcome: str
    created_at: float
    delivered_at: float | None
    hops: int
    mode_used: str
    payload_size: int = 256

    def __post_init__(self):
        if self.outcome not in (DELIVERED, UNDELIVERED):
            raise ValueError(f"unknown outcome {self.outcome!r}")
        if self.outcome == DELIVERED:
            if self.delivered_at is None or self.delivered_at < self.created_at:
                raise ValueError("delivered_at must be >= created_at")


class RecordTable:
    """Column view of records; what the metric functions actually consume."""

    def __init__(self, created_at, delivered_at, payload_size):
        self.created_at = np.asarray(created_at, dtype=float)
        self.delivered_at = np.asarray(delivered_at, dtype=float)
        self.payload_size = np.asarray(payload_size, dtype=float)
        self.delivered = ~np.isnan(self.delivered_at)

    def __len__(self):
        return self.created_at.size

    @classmethod
    def of(cls, records) -> "RecordTable":
        if isinstance(records, RecordTable):
            return records
        records = list(records)
        return cls([r.created_at for r in records],
                   [r.delivered_at if r.outcome == DELIVERED else math.nan for r in records],
                   [r.payload_size for r in records])

    @classmethod
    def concat(cls, tables: Sequence["RecordTable"]) -> "RecordTable":
        if not tables:
            return cls([], [], [])
        return cls(np.concatenate([t.created_at for t in tables]),
                   np.concatenate([t.delivered_at for t in tables]),
                   np.concatenate([t.payload_size for t in tables]))


def end_to_end_delay(records) -> float | None:
    """Mean delivery latency over delivered pairs; None when nothing was delivered."""
    t = RecordTable.of(records)
    if not t.delivered.any():
        return None
    return float(np.mean(t.delivered_at[t.delivered] - t.created_at[t.delivered]))


def delivery_probability(records) -> float | None:
    t = RecordTable.of(records)
    if len(t) == 0:
        return None
    return int(t.delivered.sum()) / len(t)


def collision_ratio(collided: int, delivered: int, shadow_blocked: int) -> float:
    total = collided + delivered + shadow_blocked
    return 0.0 if total == 0 else collided / total


def avg_throughput(records, duration: float) -> float:
    if not duration > 0:
        raise ValueError("duration must be > 0")
    t = RecordTable.of(records)
    return float(np.sum(t.payload_size[t.delivered]) * 8.0) / duration


@dataclass(frozen=True)
class RunSummary:
    n_vehicles: int
    protocol: str
    seed: int
    mean_e2e_delay: float | None
    delivery_probability: float | None
    collision_ratio: float
    avg_throughput: float
    messages: int = 0
    target_pairs: int = 0
    delivered_pairs: int = 0

    def __post_init__(self):
        for name in ("delivery_probability", "collision_ratio"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.delivered_pairs and not (self.mean_e2e_delay or 0) > 0:
            raise ValueError("delay must be > 0 when anything was delivered")


def summarize(records, tallies, duration: float, *, n_vehicles: int, protocol: str,
              seed: int, messages: int = 0) -> RunSummary:
    t = RecordTable.of(records)
    return RunSummary(
        n_vehicles=n_vehicles, protocol=protocol, seed=seed,
        mean_e2e_delay=end_to_end_delay(t),
        delivery_probability=delivery_probability(t),
        collision_ratio=collision_ratio(tallies.collided, tallies.delivered,
                                        tallies.shadow_blocked),
        avg_throughput=avg_throughput(t, duration),
        messages=messages, target_pairs=len(t), delivered_pairs=int(t.delivered.sum()))


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return repr(v) if isinstance(v, float) else str(v)


def summary_csv(summary: RunSummary, header: Sequence[str] = ()) -> str:
    names = [f.name for f in fields(RunSummary)]
    lines = [f"# {h}" for h in header]
    lines.append(",".join(names))
    row = asdict(summary)
    lines.append(",".join(_fmt(row[n]) for n in names))
    return "\n".join(lines) + "\n"


def parse_summary_csv(text: str) -> RunSummary:
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    names, values = rows[0].split(","), rows[1].split(",")
    kinds = {f.name: f.type for f in fields(RunSummary)}
    out = {}
    for n, v in zip(names, values):
        if v == "NA":
            out[n] = None
        elif kinds[n] in ("int",):
            out[n] = int(v)
        elif kinds[n] == "str":
            out[n] = v
        else:
            out[n] = float(v)
    return RunSummary(**out)


@dataclass(frozen=True)
class Cell:
    mean: float | None
    ci95: float | None
    n: int
    values: tuple = ()


def ci95_half_width(values: Sequence[float]) -> float | None:
    n = len(values)
    if n < 2:
        return None
    sem = float(np.std(values, ddof=1)) / math.sqrt(n)
    return float(stats.t.ppf(0.975, n - 1)) * sem


class SweepTable:
    """Per-(protocol, vehicle count) mean and 95% CI of each metric over seeds."""

    def __init__(self, cells: dict, protocols: list[str], counts: list[int]):
        self.cells = cells  # metric -> (protocol, n) -> Cell
        self.protocols = protocols
        self.counts = counts

    def __getitem__(self, key) -> Cell:
        metric, protocol, n = key
        return self.cells[metric][protocol, n]

    def series(self, metric: str, protocol: str) -> list[float | None]:
        return [self.cells[metric][protocol, n].mean for n in self.counts]

    def n_cells(self) -> int:
        return len(self.protocols) * len(self.counts)

    def to_csv(self, metric: str, header: Sequence[str] = ()) -> str:
        buf = io.StringIO()
        for h in header:
            buf.write(f"# {h}\n")
        cols = ["n_vehicles"]
        for p in self.protocols:
            cols += [p, f"{p}_ci95", f"{p}_n"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for n in self.counts:
            row = [n]
            for p in self.protocols:
                c = self.cells[metric].get((p, n), Cell(None, None, 0))
                row += [_fmt(c.mean), _fmt(c.ci95), c.n]
            w.writerow(row)
        return buf.getvalue()


def aggregate_sweep(summaries: Iterable[RunSummary]) -> SweepTable:
    groups: dict = {}
    for s in summaries:
        groups.setdefault((s.protocol, s.n_vehicles), []).append(s)
    if not groups:
        raise ValueError("aggregate_sweep needs at least one summary")
    protocols = sorted({p for p, _ in groups}, key=_protocol_order)
    counts = sorted({n for _, n in groups})
    expected = max(len(v) for v in groups.values())
    cells: dict = {m: {} for m in METRIC_FILES}
    for key, runs in sorted(groups.items(), key=lambda kv: (_protocol_order(kv[0][0]), kv[0][1])):
        if len(runs) < expected:
            warnings.warn(f"cell {key} has {len(runs)} seeds, expected {expected}", stacklevel=2)
        for m in METRIC_FILES:
            vals = [getattr(r, m) for r in sorted(runs, key=lambda r: r.seed)]
            vals = [v for v in vals if v is not None]
            mean = float(np.mean(vals)) if vals else None
            cells[m][key] = Cell(mean, ci95_half_width(vals), len(vals), tuple(vals))
    for p in protocols:
        for n in counts:
            for m in METRIC_FILES:
                if (p, n) not in cells[m]:
                    warnings.warn(f"cell {(p, n)} is missing", stacklevel=2)
                    cells[m][p, n] = Cell(None, None, 0)
    return SweepTable(cells, protocols, counts)


_ORDER = ["hybrid", "cmds-like", "clbp-like", "cloudvanet-like"]


def _protocol_order(p: str):
    return (_ORDER.index(p) if p in _ORDER else len(_ORDER), p)
