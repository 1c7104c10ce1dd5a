"""Dissemination decisions: mode selection and gateway coverage.

These are the pure building blocks. :mod:`urbanvanet.sim` drives them on
the event timeline for the hybrid protocol and the three comparators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoGatewayAvailable
from .geometry import LinkModel, Obstacle, ObstacleArray, Point, RegionClass, shadow_fraction


class DisseminationMode(str, Enum):
    CLOUD_GATEWAY = "CloudGateway"
    MULTIHOP_V2V = "MultiHopV2V"
    MULTIHOP_V2I = "MultiHopV2I"


class Protocol(str, Enum):
    HYBRID = "hybrid"
    CMDS_LIKE = "cmds-like"
    CLBP_LIKE = "clbp-like"
    CLOUDVANET_LIKE = "cloudvanet-like"


@dataclass(frozen=True)
class CloudModel:
    uplink_delay: float = 0.020
    downlink_delay: float = 0.020
    processing_delay: float = 0.010
    deploy_delay: float = 0.100
    # uniform extra latency in [0, jitter] per uplink / downlink leg
    uplink_jitter: float = 0.0
    downlink_jitter: float = 0.0
    retry_interval: float = 0.1
    max_retries: int = 3
    k_max: int = 3

    def __post_init__(self):
        for name in ("uplink_delay", "downlink_delay", "processing_delay", "deploy_delay",
                     "uplink_jitter", "downlink_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError("must be >= 0", f"cloud.{name}")
        if self.retry_interval <= 0:
            raise ConfigError("must be > 0", "cloud.retry_interval")
        if self.max_retries < 0:
            raise ConfigError("must be >= 0", "cloud.max_retries")
        if self.k_max < 1:
            raise ConfigError("must be >= 1", "cloud.k_max")


@dataclass(frozen=True)
class ProtocolParams:
    threshold: float = 0.5
    ttl: int = 10
    # share of messages the static-split comparator sends through the cloud
    cloud_split: float = 0.5
    # contention-based relay election used by the comparators' multi-hop path
    election_min: float = 0.001
    election_max: float = 0.100
    # uniform random wait before a designated relay rebroadcasts
    forward_jitter: float = 0.010

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("must be in [0, 1]", "protocol.threshold")
        if self.ttl < 1:
            raise ConfigError("must be >= 1", "protocol.ttl")
        if not 0.0 <= self.cloud_split <= 1.0:
            raise ConfigError("must be in [0, 1]", "protocol.cloud_split")
        if self.forward_jitter < 0:
            raise ConfigError("must be >= 0", "protocol.forward_jitter")
        if not 0 <= self.election_min <= self.election_max:
            raise ConfigError("must satisfy 0 <= election_min <= election_max",
                              "protocol.election_min")


@dataclass(frozen=True)
class GatewayInfo:
    gateway_id: str
    pos: Point
    access_delay: float = 0.0
    bandwidth: float = 2e6

    def __post_init__(self):
        if self.access_delay < 0:
            raise ValueError("access_delay must be >= 0")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")


@dataclass
class Message:
    id: int
    source: str
    payload_size: int
    created_at: float
    target_set: frozenset
    hop_trace: list = field(default_factory=list)

    def record_hop(self, node: str, time: float, action: str = "") -> None:
        if self.hop_trace and time < self.hop_trace[-1][1]:
            raise ValueError("hop_trace times must be non-decreasing")
        self.hop_trace.append((node, time, action))


def mode_from_classes(vehicle_cls: np.ndarray, rsu_cls: np.ndarray,
                      threshold: float) -> DisseminationMode:
    """Mode from link classes toward nearby vehicles and RSUs."""
    in_v = vehicle_cls != RegionClass.OUT_OF_RANGE
    in_r = rsu_cls != RegionClass.OUT_OF_RANGE
    total = int(in_v.sum() + in_r.sum())
    shadowed = int((vehicle_cls == RegionClass.SHADOWED).sum()
                   + (rsu_cls == RegionClass.SHADOWED).sum())
    frac = 1.0 if total == 0 else shadowed / total
    if frac >= threshold:
        return DisseminationMode.CLOUD_GATEWAY
    if np.any(vehicle_cls == RegionClass.CLEAR):
        return DisseminationMode.MULTIHOP_V2V
    return DisseminationMode.MULTIHOP_V2I


def select_mode(source: Point, neighbors: Sequence[Point], rsus: Sequence[Point],
                obstacles: Sequence[Obstacle], lm: LinkModel,
                threshold: float = 0.5) -> DisseminationMode:
    """Cloud when enough of the source's links are shadowed, else multi-hop.

    V2V is chosen when some vehicle is reachable over a clear link;
    otherwise the clear links must lead to RSUs and the path is V2I.
    """
    frac = shadow_fraction(source, list(neighbors) + list(rsus), obstacles, lm)
    if frac >= threshold:
        return DisseminationMode.CLOUD_GATEWAY
    arr = ObstacleArray(obstacles)
    if len(neighbors):
        cls = arr.classify_from(source, np.asarray(neighbors, dtype=float), lm)
        if np.any(cls == RegionClass.CLEAR):
            return DisseminationMode.MULTIHOP_V2V
    return DisseminationMode.MULTIHOP_V2I


def greedy_max_coverage(cover: np.ndarray, access_delay: Sequence[float],
                        ids: Sequence, k_max: int) -> list[int]:
    """Indices of rows picked by greedy maximum coverage.

    Each round takes the row covering the most still-uncovered columns;
    ties go to the lower access delay, then the lower id. Stops at k_max
    rows, full coverage, or when no row adds anything.
    """
    cover = np.asarray(cover, dtype=bool)
    if cover.ndim != 2:
        raise ValueError("cover must be a 2-D boolean matrix")
    n_rows, n_cols = cover.shape
    if n_cols == 0:
        return []
    order = sorted(range(n_rows), key=lambda r: (access_delay[r], ids[r]))
    uncovered = np.ones(n_cols, dtype=bool)
    chosen: list[int] = []
    while len(chosen) < k_max and uncovered.any():
        gains = (cover & uncovered).sum(axis=1)
        best, best_gain = None, 0
        for r in order:
            if gains[r] > best_gain:
                best, best_gain = r, gains[r]
        if best is None:
            break
        chosen.append(best)
        uncovered &= ~cover[best]
    return chosen


def coverage_matrix(gw_pos: np.ndarray, target_pos: np.ndarray, obstacles: ObstacleArray,
                    lm: LinkModel) -> np.ndarray:
    cover = np.zeros((len(gw_pos), len(target_pos)), dtype=bool)
    for g, p in enumerate(gw_pos):
        cover[g] = obstacles.classify_from(p, target_pos, lm) == RegionClass.CLEAR
    return cover


def select_gateways(candidates: Sequence[GatewayInfo], targets: Sequence[tuple[str, Point]],
                    obstacles: Sequence[Obstacle] | ObstacleArray, lm: LinkModel,
                    k_max: int) -> list[str]:
    """Greedy max-coverage choice of gateways for the cloud's downlink.

    A gateway covers a target within transmission range over a clear link.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not targets:
        return []
    if not candidates:
        raise NoGatewayAvailable("no gateway candidates for a non-empty target set")
    arr = obstacles if isinstance(obstacles, ObstacleArray) else ObstacleArray(obstacles)
    gw_pos = np.array([c.pos for c in candidates], dtype=float)
    tg_pos = np.array([p for _, p in targets], dtype=float)
    cover = coverage_matrix(gw_pos, tg_pos, arr, lm)
    picked = greedy_max_coverage(cover, [c.access_delay for c in candidates],
                                 [c.gateway_id for c in candidates], k_max)
    return [candidates[r].gateway_id for r in picked]
