"""Command-line entry point: ``urbanvanet run|sweep|gen-scenario|validate``.

Exit codes: 0 ok, 1 run failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import PROTOCOLS, ScenarioConfig, apply_overrides, config_hash, dumps, load
from .errors import ConfigError
from .metrics import COLLISION_NOTE, METRIC_FILES, aggregate_sweep
from .mobility import generate_grid_scenario, grid_rsus, write_trace
from .runner import execute, run_dir_name, validate_run, write_run

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="urbanvanet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"urbanvanet {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="TOML scenario config (defaults when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. n_vehicles=450 or mac.cw_min=63")
        if seed:
            p.add_argument("--seed", type=int, help="root seed (overrides run.seed)")
        p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("run", help="one simulation run")
    common(p)
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--trace", action="store_true", help="also write hop_trace.csv")
    p.add_argument("--debug-events", action="store_true",
                   help="also write the plain-text event log")

    p = sub.add_parser("sweep", help="protocols x vehicle counts x seeds")
    common(p, seed=False)
    p.add_argument("--protocols", help="comma list (default run.protocols)")
    p.add_argument("--counts", help="comma list of vehicle counts (default run.vehicle_counts)")
    p.add_argument("--seeds", help="comma list or a-b range (default run.seeds)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    p.add_argument("--trace", action="store_true", help="write hop_trace.csv per run")
    p.add_argument("--debug-events", action="store_true")

    p = sub.add_parser("gen-scenario", help="write a grid scenario as a trace config")
    common(p)

    p = sub.add_parser("validate", help="replay a run directory and compare metric CSVs")
    p.add_argument("run_dir")
    return ap


def _load_config(args) -> ScenarioConfig:
    cfg = load(args.config) if args.config else ScenarioConfig()
    cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_run(seed=args.seed)
    if getattr(args, "protocol", None):
        cfg = cfg.with_run(protocol=args.protocol)
    return cfg


def _stamp() -> str:
    return time.strftime("%Y%m%d-%H%M%S")


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.6g}"


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = execute(cfg)
    run_dir = write_run(out, Path(args.out) / run_dir_name(cfg, _stamp()),
                        hop_trace=args.trace, debug_events=args.debug_events)
    s = out.summary
    print(f"run dir: {run_dir}")
    print(f"protocol={s.protocol} n_vehicles={s.n_vehicles} seed={s.seed}")
    print(f"mean_e2e_delay={_fmt(s.mean_e2e_delay)} s  delivery_probability="
          f"{_fmt(s.delivery_probability)}  collision_ratio={_fmt(s.collision_ratio)}  "
          f"avg_throughput={_fmt(s.avg_throughput)} bit/s")
    return EXIT_OK


def _int_list(text: str, name: str) -> list[int]:
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise UsageError(f"--{name}: expected integers, got {text!r}") from None
    return out


def _one_run(cfg_text: str, run_dir: str, hop_trace: bool, debug_events: bool):
    from .config import loads
    cfg = loads(cfg_text)
    try:
        out = execute(cfg)
        write_run(out, run_dir, hop_trace=hop_trace, debug_events=debug_events)
        return out.summary, None
    except Exception:  # recorded and reported; the sweep goes on
        return None, traceback.format_exc()


def cmd_sweep(args) -> int:
    base = _load_config(args)
    protocols = ([p.strip() for p in args.protocols.split(",") if p.strip()]
                 if args.protocols is not None else list(base.run.protocols))
    counts = (_int_list(args.counts, "counts") if args.counts is not None
              else list(base.run.vehicle_counts))
    seeds = _int_list(args.seeds, "seeds") if args.seeds is not None else list(base.run.seeds)
    for name, axis in (("protocols", protocols), ("counts", counts), ("seeds", seeds)):
        if not axis:
            raise UsageError(f"--{name}: at least one value is required")
    bad = [p for p in protocols if p not in PROTOCOLS]
    if bad:
        raise UsageError(f"--protocols: unknown {', '.join(bad)}; choose from {PROTOCOLS}")
    if base.grid is None and len(counts) > 1:
        raise UsageError("--counts: trace scenarios have a fixed vehicle population")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for p in protocols:
        for n in counts:
            cfg = base if base.grid is None else base.with_vehicles(n)
            for s in seeds:
                c = cfg.with_run(protocol=p, seed=s)
                run_dir = out_dir / "runs" / run_dir_name(c, "run")
                jobs.append((c, str(run_dir)))
    print(f"sweep: {len(protocols)} protocols x {len(counts)} counts x {len(seeds)} seeds "
          f"= {len(jobs)} runs, {args.jobs} jobs")
    results = []
    if args.jobs == 1:
        for c, d in jobs:
            results.append(_one_run(dumps(c), d, args.trace, args.debug_events))
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            futs = [ex.submit(_one_run, dumps(c), d, args.trace, args.debug_events)
                    for c, d in jobs]
            results = [f.result() for f in futs]
    summaries, failures = [], []
    for (c, d), (summary, err) in zip(jobs, results):
        if err is None:
            summaries.append(summary)
        else:
            failures.append((c, d, err))
    if failures:
        with open(out_dir / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("protocol", "n_vehicles", "seed", "run_dir", "error"))
            for c, d, err in failures:
                w.writerow((c.run.protocol, c.n_vehicles, c.run.seed, d,
                            err.strip().splitlines()[-1]))
                print(f"FAILED {d}:\n{err}", file=sys.stderr)
    if summaries:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            table = aggregate_sweep(summaries)
        for wmsg in caught:
            print(f"warning: {wmsg.message}", file=sys.stderr)
        header = [f"urbanvanet {__version__}", f"config_sha256 {config_hash(base)}",
                  f"seeds {','.join(map(str, seeds))}", f"duration_s {base.run.duration!r}"]
        for metric, fname in METRIC_FILES.items():
            extra = [COLLISION_NOTE] if metric == "collision_ratio" else []
            (out_dir / fname).write_text(table.to_csv(metric, header + extra),
                                         encoding="utf-8", newline="\n")
        (out_dir / "config.toml").write_text(dumps(base), encoding="utf-8", newline="\n")
        print(f"{len(summaries)} runs ok, {len(failures)} failed; tables in {out_dir}")
    return EXIT_FAIL if failures else EXIT_OK


def cmd_gen_scenario(args) -> int:
    cfg = _load_config(args)
    if cfg.grid is None:
        raise UsageError("gen-scenario needs a grid scenario")
    spec = replace(cfg.grid, horizon=cfg.run.duration)
    samples, obstacles = generate_grid_scenario(spec, cfg.run.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "trace.csv", samples)
    traced = replace(cfg, grid=None, trace=str((out_dir / "trace.csv").resolve()),
                     rsus=tuple(grid_rsus(spec)), obstacles=tuple(obstacles))
    (out_dir / "scenario.toml").write_text(dumps(traced), encoding="utf-8", newline="\n")
    print(f"wrote {out_dir / 'trace.csv'} ({len(samples)} samples) and "
          f"{out_dir / 'scenario.toml'} ({len(obstacles)} obstacles)")
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate_run(args.run_dir)
    print(("PASS: " if report.ok else "FAIL: ") + report.message)
    return EXIT_OK if report.ok else EXIT_FAIL


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-scenario": cmd_gen_scenario,
            "validate": cmd_validate}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename or e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        traceback.print_exc()
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
