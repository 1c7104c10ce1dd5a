"""Scenario configuration: TOML schema, validation, overrides and hashing.

A config file has these sections (every key optional, unknown keys are
errors)::

    [run]        protocol, seed, duration, protocols, vehicle_counts, seeds
    [scenario]   exactly one of a [scenario.grid] table or ``trace = "path.csv"``;
                 ``rsus = [[x, y], ...]`` for trace scenarios
    [obstacles]  ``rects = [[x0, y0, x1, y1], ...]``; omitted on grid scenarios
                 means the generated city blocks
    [link] [mac] [cloud] [protocol] [workload]

Optional numbers that may be unset are written as the string ``"auto"``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import sys
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import MacParams
from .errors import ConfigError, InvalidInputError
from .geometry import LinkModel, Obstacle, Point
from .mobility import GridSpec
from .protocols import CloudModel, Protocol, ProtocolParams
from .sim import Workload

AUTO = "auto"
PROTOCOLS = tuple(p.value for p in Protocol)
DEFAULT_COUNTS = tuple(range(50, 451, 50))
# the generated trace always spans the run, so the horizon is not a config key
_GRID_SKIP = {"horizon"}


@dataclass(frozen=True)
class RunSection:
    protocol: str = "hybrid"
    seed: int = 42
    duration: float = 200.0
    # sweep axes
    protocols: tuple = PROTOCOLS
    vehicle_counts: tuple = DEFAULT_COUNTS
    seeds: tuple = tuple(range(1, 21))

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}",
                              "run.protocol")
        if not self.duration > 0:
            raise ConfigError("must be > 0", "run.duration")
        for p in self.protocols:
            if p not in PROTOCOLS:
                raise ConfigError(f"unknown protocol {p!r}", "run.protocols")
        if any(n < 0 for n in self.vehicle_counts):
            raise ConfigError("must be >= 0", "run.vehicle_counts")


@dataclass(frozen=True)
class ScenarioConfig:
    run: RunSection = field(default_factory=RunSection)
    grid: GridSpec | None = field(default_factory=GridSpec)
    trace: str | None = None
    rsus: tuple | None = None
    obstacles: tuple | None = None
    link: LinkModel = field(default_factory=LinkModel)
    mac: MacParams = field(default_factory=MacParams)
    cloud: CloudModel = field(default_factory=CloudModel)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    workload: Workload = field(default_factory=Workload)

    def __post_init__(self):
        if (self.grid is None) == (self.trace is None):
            raise ConfigError("exactly one of [scenario.grid] or scenario.trace is required",
                              "scenario")
        if self.trace is None and self.rsus is not None:
            raise ConfigError("rsus are generated on grid scenarios", "scenario.rsus")

    @property
    def n_vehicles(self) -> int | None:
        return self.grid.n_vehicles if self.grid is not None else None

    def with_run(self, **kw) -> "ScenarioConfig":
        return replace(self, run=replace(self.run, **kw))

    def with_vehicles(self, n: int) -> "ScenarioConfig":
        if self.grid is None:
            raise ConfigError("n_vehicles only applies to grid scenarios", "scenario.grid")
        return replace(self, grid=replace(self.grid, n_vehicles=n))


_SECTIONS = {"link": LinkModel, "mac": MacParams, "cloud": CloudModel,
             "protocol": ProtocolParams, "workload": Workload}


# -- typed conversion ----------------------------------------------------
def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _is_optional(tp) -> bool:
    return type(None) in typing.get_args(tp)


def _base(tp):
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0]
    return tp


def _coerce(value, tp, where: str):
    if value == AUTO and _is_optional(tp):
        return None
    base = _base(tp)
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", where)
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", where)
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", where)
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", where)
        return value
    if base is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", where)
        return tuple(value)
    return value


def _build(cls, table: dict, section: str, skip=frozenset()):
    if not isinstance(table, dict):
        raise ConfigError("expected a table", section)
    hints = _hints(cls)
    names = {f.name for f in fields(cls)} - set(skip)
    unknown = sorted(set(table) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(unknown)}", section)
    kw = {k: _coerce(v, hints[k], f"{section}.{k}") for k, v in table.items()}
    return cls(**kw)


def _dump(obj, skip=frozenset()) -> dict:
    out = {}
    for f in fields(obj):
        if f.name in skip:
            continue
        v = getattr(obj, f.name)
        if v is None:
            v = AUTO
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _points(value, where: str) -> tuple:
    try:
        pts = tuple(Point(float(p[0]), float(p[1])) for p in value if len(p) == 2)
    except (TypeError, ValueError, IndexError):
        raise ConfigError("expected a list of [x, y] pairs", where) from None
    if len(pts) != len(value):
        raise ConfigError("expected a list of [x, y] pairs", where)
    return pts


def _rects(value, where: str) -> tuple:
    if not isinstance(value, list):
        raise ConfigError("expected a list of [x0, y0, x1, y1] rectangles", where)
    out = []
    for k, r in enumerate(value):
        if not isinstance(r, list) or len(r) != 4:
            raise ConfigError("expected [x0, y0, x1, y1]", f"{where}[{k}]")
        try:
            out.append(Obstacle.from_bounds(*(float(v) for v in r)))
        except (TypeError, ValueError, InvalidInputError) as e:
            raise ConfigError(str(e), f"{where}[{k}]") from None
    return tuple(out)


# -- public API ----------------------------------------------------------
def from_dict(data: dict, base_dir: Path | None = None) -> ScenarioConfig:
    known = {"run", "scenario", "obstacles", *_SECTIONS}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    try:
        run = _build(RunSection, data.get("run", {}), "run")
        sc = data.get("scenario", {"grid": {}})
        if not isinstance(sc, dict):
            raise ConfigError("expected a table", "scenario")
        extra = sorted(set(sc) - {"grid", "trace", "rsus"})
        if extra:
            raise ConfigError(f"unknown key(s) {', '.join(extra)}", "scenario")
        grid = _build(GridSpec, sc["grid"], "scenario.grid", _GRID_SKIP) if "grid" in sc else None
        trace = sc.get("trace")
        if trace is not None:
            if not isinstance(trace, str):
                raise ConfigError("expected a file path", "scenario.trace")
            p = Path(trace)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            trace = str(p.resolve()) if base_dir is not None else trace
        rsus = _points(sc["rsus"], "scenario.rsus") if "rsus" in sc else None
        if trace is not None and rsus is None:
            rsus = ()
        obs = data.get("obstacles")
        obstacles = None
        if obs is not None:
            if not isinstance(obs, dict) or set(obs) - {"rects"}:
                raise ConfigError("only 'rects' is allowed", "obstacles")
            obstacles = _rects(obs.get("rects", []), "obstacles.rects")
        parts = {k: _build(cls, data.get(k, {}), k) for k, cls in _SECTIONS.items()}
        return ScenarioConfig(run=run, grid=grid, trace=trace, rsus=rsus,
                              obstacles=obstacles, **parts)
    except (TypeError, InvalidInputError) as e:
        raise ConfigError(str(e)) from None


def to_dict(cfg: ScenarioConfig) -> dict:
    out: dict[str, Any] = {"run": _dump(cfg.run)}
    sc: dict[str, Any] = {}
    if cfg.grid is not None:
        sc["grid"] = _dump(cfg.grid, _GRID_SKIP)
    else:
        sc["trace"] = cfg.trace
        sc["rsus"] = [[float(p[0]), float(p[1])] for p in cfg.rsus or ()]
    out["scenario"] = sc
    if cfg.obstacles is not None:
        out["obstacles"] = {"rects": [[float(v) for v in o.bounds] for o in cfg.obstacles]}
    for k in _SECTIONS:
        out[k] = _dump(getattr(cfg, k))
    return out


def dumps(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def loads(text: str, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"not valid TOML: {e}") from None
    return from_dict(data, base_dir)


def load(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return loads(p.read_text(encoding="utf-8"), p.parent)


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode("utf-8")).hexdigest()


# -- --set overrides -----------------------------------------------------
def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _resolve_key(data: dict, key: str) -> list[str]:
    parts = key.split(".")
    if len(parts) > 1:
        return parts
    hits = []
    for sec, cls in [("run", RunSection), ("scenario.grid", GridSpec), *_SECTIONS.items()]:
        if key in {f.name for f in fields(cls)} and not (sec == "scenario.grid" and key in _GRID_SKIP):
            hits.append(sec.split(".") + [key])
    if "scenario" in data and "grid" not in data["scenario"]:
        hits = [h for h in hits if h[:2] != ["scenario", "grid"]]
    if not hits:
        raise ConfigError("unknown key", key)
    if len(hits) > 1:
        raise ConfigError(f"ambiguous key; use one of {', '.join('.'.join(h) for h in hits)}", key)
    return hits[0]


def apply_overrides(cfg: ScenarioConfig, overrides: list[str]) -> ScenarioConfig:
    """Apply ``key=value`` strings; bare keys resolve to their unique section."""
    if not overrides:
        return cfg
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}", "--set")
        key, text = item.split("=", 1)
        path = _resolve_key(data, key.strip())
        node = data
        for p in path[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("not a table", ".".join(path))
        node[path[-1]] = _parse_value(text.strip())
    return from_dict(data)
