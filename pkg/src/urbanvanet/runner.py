"""Config-driven runs and the files they leave behind.

A run directory holds::

    config.toml      effective config (seed and protocol included)
    summary.csv      one RunSummary row
    messages.csv     one row per (message, target) pair
    events.log.gz    full event log, gzip with a zeroed timestamp
    hop_trace.csv    per-message relay path (optional)
    events.log       plain event log (optional)

The two CSVs are the metric outputs that replay validation compares.
"""

from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .config import ScenarioConfig, config_hash, dumps, load
from .geometry import Point
from .metrics import COLLISION_NOTE, RunSummary, summarize, summary_csv
from .mobility import Trace, generate_grid_scenario, grid_rsus, load_trace
from .sim import RunResult, Simulation

MESSAGE_COLUMNS = ("message_id", "source", "target", "outcome", "created_at",
                   "delivered_at", "hops", "mode_used")
METRIC_FILES = ("summary.csv", "messages.csv")


@dataclass
class RunOutput:
    result: RunResult
    summary: RunSummary
    config: ScenarioConfig


def build_scenario(cfg: ScenarioConfig, seed: int):
    """(trace, rsus, obstacles) for one run."""
    if cfg.grid is not None:
        spec = replace(cfg.grid, horizon=cfg.run.duration)
        samples, obstacles = generate_grid_scenario(spec, seed)
        rsus = grid_rsus(spec)
    else:
        samples = load_trace(cfg.trace)
        rsus = [Point(*p) for p in cfg.rsus or ()]
        obstacles = []
    if cfg.obstacles is not None:
        obstacles = list(cfg.obstacles)
    return Trace(samples), rsus, obstacles


def execute(cfg: ScenarioConfig, keep_log: bool = True) -> RunOutput:
    trace, rsus, obstacles = build_scenario(cfg, cfg.run.seed)
    sim = Simulation(trace, rsus, obstacles, protocol=cfg.run.protocol, seed=cfg.run.seed,
                     duration=cfg.run.duration, lm=cfg.link, mac=cfg.mac, cloud=cfg.cloud,
                     params=cfg.protocol, workload=cfg.workload, keep_log=keep_log)
    result = sim.run()
    n = cfg.n_vehicles if cfg.n_vehicles is not None else int(result.world.is_car.sum())
    summary = summarize(result.records, result.tallies, cfg.run.duration, n_vehicles=n,
                        protocol=cfg.run.protocol, seed=cfg.run.seed,
                        messages=len(result.messages))
    return RunOutput(result, summary, cfg)


def header_lines(cfg: ScenarioConfig) -> list[str]:
    return [f"urbanvanet {__version__}", f"config_sha256 {config_hash(cfg)}",
            f"seed {cfg.run.seed}", f"duration_s {cfg.run.duration!r}", COLLISION_NOTE]


def _num(v: float | None) -> str:
    return "NA" if v is None or math.isnan(v) else repr(float(v))


def messages_csv(out: RunOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MESSAGE_COLUMNS)
    for r in out.result.metrics_records():
        w.writerow([r.message_id, r.source, r.target, r.outcome, _num(r.created_at),
                    _num(r.delivered_at), r.hops, r.mode_used])
    return buf.getvalue()


def hop_trace_csv(out: RunOutput) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("message_id", "node", "time", "action"))
    for st in out.result.messages:
        for node, t, action in st.msg.hop_trace:
            w.writerow([st.msg.id, node, repr(float(t)), action])
    return buf.getvalue()


def metric_texts(out: RunOutput) -> dict[str, str]:
    return {"summary.csv": summary_csv(out.summary, header_lines(out.config)),
            "messages.csv": messages_csv(out)}


def event_log_text(out: RunOutput) -> str:
    return "\n".join(out.result.log or []) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def write_run(out: RunOutput, run_dir, *, hop_trace: bool = False,
              debug_events: bool = False) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write(run_dir / "config.toml", dumps(out.config))
    for name, text in metric_texts(out).items():
        _write(run_dir / name, text)
    log = event_log_text(out)
    with open(run_dir / "events.log.gz", "wb") as fh:
        fh.write(gzip.compress(log.encode("utf-8"), mtime=0))
    if debug_events:
        _write(run_dir / "events.log", log)
    if hop_trace:
        _write(run_dir / "hop_trace.csv", hop_trace_csv(out))
    return run_dir


def run_dir_name(cfg: ScenarioConfig, stamp: str) -> str:
    n = cfg.n_vehicles if cfg.n_vehicles is not None else "trace"
    return f"{stamp}-{cfg.run.protocol}-n{n}-s{cfg.run.seed}"


@dataclass
class ValidationReport:
    ok: bool
    message: str


def _first_diff(name: str, want: str, got: str) -> str:
    a, b = want.splitlines(), got.splitlines()
    for k, (x, y) in enumerate(zip(a, b), start=1):
        if x != y:
            return f"{name} line {k}: recorded {x!r} vs replay {y!r}"
    return f"{name}: recorded {len(a)} lines vs replay {len(b)} lines"


def validate_run(run_dir) -> ValidationReport:
    """Replay a run directory and compare its metric CSVs byte for byte."""
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.toml"
    if not cfg_path.is_file():
        raise FileNotFoundError(f"no config.toml in {run_dir}")
    if not (run_dir / "events.log.gz").is_file() and not (run_dir / "events.log").is_file():
        raise FileNotFoundError(f"no event log in {run_dir}")
    cfg = load(cfg_path)
    out = execute(cfg, keep_log=True)
    for name, text in metric_texts(out).items():
        path = run_dir / name
        if not path.is_file():
            return ValidationReport(False, f"{name} is missing")
        recorded = path.read_bytes()
        if recorded != text.encode("utf-8"):
            return ValidationReport(False, _first_diff(name, recorded.decode("utf-8", "replace"),
                                                       text))
    return ValidationReport(True, f"{', '.join(METRIC_FILES)} identical on replay")
