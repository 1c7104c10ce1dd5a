"""Simplified IEEE 802.11p broadcast channel.

CSMA/CA with a uniform backoff drawn from the contention window, binary
obstacle blockage, and collision at a receiver whenever two clear, in-range
signals overlap in time (no capture). Shadowed signals carry no energy, so
they neither deliver nor interfere.

Periodic beacons are not simulated as individual frames. Every node beacons
on a fixed phase; a beacon is materialised only when it matters: it freezes
a contending sender's backoff, and it collides with a data frame at a
receiver that hears it while the beacon's sender is hidden from the data
sender. Beacon senders that can hear the data sender defer and never
collide with it.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .engine import Engine, EventKind
from .errors import ConfigError, SimulationIntegrityError
from .geometry import LinkModel, Obstacle, Point, RegionClass, classify_link


@dataclass(frozen=True)
class MacParams:
    data_rate: float = 2e6
    cw_min: int = 31
    cw_max: int = 1023
    slot_time: float = 13e-6
    sifs: float = 32e-6
    msg_size: int = 256
    retries: int = 2
    beacon_interval: float = 0.1
    beacon_size: int = 100
    beacons: bool = True
    zero_backoff: bool = False
    # carrier-sense reach over unobstructed paths; None -> transmission range
    cs_range: float | None = 600.0
    # bus antennas sit above the buildings for sensing within transmission range
    elevated_bus_sensing: bool = True

    def __post_init__(self):
        checks = [
            (self.data_rate > 0, "data_rate", "must be > 0"),
            (0 < self.cw_min <= self.cw_max, "cw_min", "must satisfy 0 < cw_min <= cw_max"),
            (self.slot_time > 0, "slot_time", "must be > 0"),
            (self.sifs >= 0, "sifs", "must be >= 0"),
            (self.msg_size > 0, "msg_size", "must be > 0"),
            (self.retries >= 0, "retries", "must be >= 0"),
            (self.beacon_interval > 0, "beacon_interval", "must be > 0"),
            (self.beacon_size > 0, "beacon_size", "must be > 0"),
            (self.cs_range is None or self.cs_range > 0, "cs_range", "must be > 0"),
        ]
        for ok, name, msg in checks:
            if not ok:
                raise ConfigError(msg, f"mac.{name}")

    @property
    def beacon_airtime(self) -> float:
        return self.beacon_size * 8 / self.data_rate


def tx_duration(p: MacParams) -> float:
    return p.msg_size * 8 / p.data_rate


def draw_backoff(rng: np.random.Generator, cw: int) -> int:
    """Uniform integer in [0, cw]."""
    return int(rng.integers(0, cw + 1))


def next_cw(cw: int, p: MacParams) -> int:
    return min(2 * (cw + 1) - 1, p.cw_max)


class RxOutcome(str, Enum):
    DELIVERED = "Delivered"
    COLLIDED = "Collided"
    SHADOW_BLOCKED = "ShadowBlocked"
    OUT_OF_RANGE = "OutOfRange"


@dataclass(frozen=True)
class TxAttempt:
    sender: str
    message_id: int
    start: float
    end: float

    def __post_init__(self):
        if not self.end > self.start:
            raise SimulationIntegrityError(f"attempt must have end > start: {self}")

    def overlaps(self, other: "TxAttempt") -> bool:
        return self.start < other.end and other.start < self.end


def resolve_receptions(attempts: Sequence[TxAttempt], receivers: Sequence[str],
                       positions: Callable[[str, float], Point] | Mapping,
                       obstacles: Sequence[Obstacle], lm: LinkModel, p: MacParams,
                       rng: np.random.Generator | None = None
                       ) -> dict[tuple[int, str], RxOutcome]:
    """Outcome of every (attempt index, receiver) pair.

    Reference implementation over explicit attempts; the simulator's
    :class:`Channel` reproduces it frame by frame. ``positions`` is either a
    ``(node, t) -> Point`` callable or a static ``{node: Point}`` mapping.
    """
    if callable(positions):
        pos_fn = positions
    else:
        def pos_fn(node, _t):
            return positions[node]

    def where(node, t):
        try:
            pt = pos_fn(node, t)
        except (KeyError, LookupError) as exc:
            raise SimulationIntegrityError(f"no position for {node!r} at t={t}") from exc
        if pt is None:
            raise SimulationIntegrityError(f"no position for {node!r} at t={t}")
        return pt

    for prev, cur in zip(attempts, attempts[1:]):
        if cur.start < prev.start:
            raise SimulationIntegrityError("attempts must be ordered by start time")

    def heard(att: TxAttempt, r: str) -> RegionClass:
        return classify_link(where(att.sender, att.start), where(r, att.start), obstacles, lm)

    out: dict[tuple[int, str], RxOutcome] = {}
    for ai, a in enumerate(attempts):
        for r in receivers:
            if r == a.sender:
                continue
            cls = heard(a, r)
            if cls is RegionClass.OUT_OF_RANGE:
                out[ai, r] = RxOutcome.OUT_OF_RANGE
                continue
            if cls is RegionClass.SHADOWED:
                lucky = lm.shadow_loss < 1.0 and rng is not None and rng.random() >= lm.shadow_loss
                if not lucky:
                    out[ai, r] = RxOutcome.SHADOW_BLOCKED
                    continue
            collided = False
            for bi, b in enumerate(attempts):
                if bi == ai or not a.overlaps(b):
                    continue
                if b.sender == r or heard(b, r) is RegionClass.CLEAR:
                    collided = True
                    break
            out[ai, r] = RxOutcome.COLLIDED if collided else RxOutcome.DELIVERED
    return out


@dataclass
class Frame:
    """A data frame queued at a node's MAC.

    ``dest`` set means a unicast leg: only the destination is a reception
    opportunity. ``required`` names a node whose reception decides success
    (the destination, or a designated relay of a broadcast); failures are
    retransmitted up to ``retries`` times with a doubled contention window.
    """
    message_id: int
    sender: int
    on_result: Callable
    dest: int | None = None
    required: int | None = None
    retries: int = 0
    cw: int = 31
    tag: str = ""
    plan_time: float = 0.0
    attempts: int = 0


@dataclass
class _Active:
    sender: int
    message_id: int
    start: float
    end: float


@dataclass
class ChannelTallies:
    delivered: int = 0
    collided: int = 0
    shadow_blocked: int = 0
    tx_count: int = 0
    # tag -> [delivered, collided, shadow_blocked, transmissions]
    by_tag: dict = field(default_factory=dict)

    @property
    def opportunities(self) -> int:
        return self.delivered + self.collided + self.shadow_blocked


class Channel:
    """Per-run MAC/PHY state bound to an engine and a world view.

    ``world`` supplies ``n``, ``positions_at(t)``, ``sense_classes(i, t)``
    (tick-cached classes from node i to every node over the carrier-sense
    range), ``obstacles`` and ``lm``. A node defers to, and never collides
    with, a transmitter it can sense.
    """

    def __init__(self, engine: Engine, world, mac: MacParams,
                 backoff_rng: np.random.Generator, loss_rng: np.random.Generator,
                 beacon_phase: np.ndarray | None):
        self.engine = engine
        self.world = world
        self.mac = mac
        self.duration = tx_duration(mac)
        self.backoff_rng = backoff_rng
        self.loss_rng = loss_rng
        self.beacons = mac.beacons and not mac.zero_backoff and beacon_phase is not None
        self.phase = beacon_phase
        self.t_b = mac.beacon_airtime
        self.queues: list[deque[Frame]] = [deque() for _ in range(world.n)]
        self.busy = np.zeros(world.n, dtype=bool)
        self.active: list[_Active] = []
        self.tallies = ChannelTallies()
        self.attempt_log: list[TxAttempt] = []
        self.keep_attempts = False
        engine.on(EventKind.TX_START, self._on_tx_start)
        engine.on(EventKind.TX_END, self._on_tx_end)
        engine.on(EventKind.RX_RESOLVE, self._on_rx_resolve)

    # -- queueing ---------------------------------------------------------
    def send(self, frame: Frame) -> None:
        frame.cw = self.mac.cw_min
        self.queues[frame.sender].append(frame)
        if not self.busy[frame.sender]:
            self._begin(frame.sender, self.engine.now)

    def queue_length(self, node: int) -> int:
        return len(self.queues[node]) + int(self.busy[node])

    def _begin(self, node: int, t: float) -> None:
        frame = self.queues[node][0]
        self.busy[node] = True
        frame.plan_time = t
        start = self._plan(node, t, frame.cw)
        self.engine.call_at(start, EventKind.RETRY_TIMER, "backoff", self._on_backoff_done, frame)

    # -- carrier sense ----------------------------------------------------
    def _neighbors(self, node: int, t: float) -> np.ndarray:
        return np.flatnonzero(self.world.sense_classes(node, t) == RegionClass.CLEAR)

    def _next_busy(self, nbr_mask: np.ndarray, nbrs: np.ndarray, cursor: float):
        best = None
        for a in self.active:
            if a.end > cursor and nbr_mask[a.sender]:
                if best is None or a.start < best[0]:
                    best = (a.start, a.end)
        if self.beacons and nbrs.size:
            P, tb = self.mac.beacon_interval, self.t_b
            ph = self.phase[nbrs]
            k = np.floor((cursor - tb - ph) / P) + 1
            s = ph + k * P
            j = int(np.argmin(s))
            if best is None or s[j] < best[0]:
                best = (float(s[j]), float(s[j]) + tb)
        return best

    def _plan(self, node: int, t: float, cw: int) -> float:
        if self.mac.zero_backoff:
            return t
        remaining = draw_backoff(self.backoff_rng, cw) * self.mac.slot_time
        nbrs = self._neighbors(node, t)
        mask = np.zeros(self.world.n, dtype=bool)
        mask[nbrs] = True
        cursor = t
        for _ in range(100_000):
            nxt = self._next_busy(mask, nbrs, cursor)
            if nxt is None or nxt[0] >= cursor + remaining:
                return cursor + remaining
            s, e = nxt
            if s > cursor:
                remaining -= s - cursor
            cursor = max(cursor, e + self.mac.sifs)
        raise SimulationIntegrityError(f"node {node} could not find an idle channel")

    # -- transmission -----------------------------------------------------
    def _on_backoff_done(self, frame: Frame):
        # a neighbour that started after our plan and at least a slot ago is
        # audible now: defer and contend again
        now = self.engine.now
        node = frame.sender
        if not self.mac.zero_backoff:
            cls = self.world.sense_classes(node, now)
            horizon = now - self.mac.slot_time
            for a in self.active:
                if a.end > now and frame.plan_time < a.start <= horizon \
                        and cls[a.sender] == RegionClass.CLEAR:
                    frame.plan_time = now
                    self.engine.call_at(self._plan(node, now, frame.cw), EventKind.RETRY_TIMER,
                                        "backoff", self._on_backoff_done, frame)
                    return f"defer n={node} m={frame.message_id}"
        self.engine.schedule(now, EventKind.TX_START, frame)
        return f"n={node} m={frame.message_id}"

    def _on_tx_start(self, ev):
        frame: Frame = ev.payload
        now = self.engine.now
        node = frame.sender
        att = _Active(node, frame.message_id, now, now + self.duration)
        self.active.append(att)
        self.tallies.tx_count += 1
        frame.attempts += 1
        if self.keep_attempts:
            self.attempt_log.append(TxAttempt(self.world.ids[node], frame.message_id, att.start, att.end))
        self.engine.schedule(att.end, EventKind.TX_END, (frame, att))
        return f"n={node} m={frame.message_id} {frame.tag}"

    def _on_tx_end(self, ev):
        frame, att = ev.payload
        self.engine.schedule(self.engine.now, EventKind.RX_RESOLVE, (frame, att))
        return f"n={frame.sender} m={frame.message_id} start={att.start!r}"

    def _on_rx_resolve(self, ev):
        frame, att = ev.payload
        delivered, n_col, n_sh = self._resolve(frame, att)
        ok = frame.required is None or bool(np.any(delivered == frame.required))
        node = frame.sender
        queue = self.queues[node]
        final = ok or frame.retries <= 0
        if not final:
            frame.retries -= 1
            frame.cw = min(2 * (frame.cw + 1) - 1, self.mac.cw_max)
        else:
            queue.popleft()
        note = frame.on_result(frame, att.end, delivered, ok, final)
        self.busy[node] = False
        self._prune(self.engine.now)
        if queue:
            self._begin(node, self.engine.now)
        head = f"n={node} m={frame.message_id} ok={int(ok)} d={delivered.size} c={n_col} b={n_sh}"
        return head if not note else f"{head} {note}"

    def _prune(self, now: float) -> None:
        limit = now - 2 * self.duration
        if self.active and self.active[0].end < limit:
            self.active = [a for a in self.active if a.end >= limit]

    def _resolve(self, frame: Frame, att: _Active):
        world = self.world
        pos = world.positions_at(att.start)
        i = frame.sender
        if frame.dest is not None:
            cand = np.array([frame.dest])
            if np.isnan(pos[frame.dest, 0]):
                raise SimulationIntegrityError(
                    f"unicast destination {world.ids[frame.dest]} has no position")
        else:
            cand = np.flatnonzero(~np.isnan(pos[:, 0]))
            cand = cand[cand != i]
        if np.isnan(pos[i, 0]):
            raise SimulationIntegrityError(f"sender {world.ids[i]} has no position at {att.start}")
        cls = world.obstacles.classify_from(pos[i], pos[cand], world.lm)
        shadow = cls == RegionClass.SHADOWED
        if world.lm.shadow_loss < 1.0 and shadow.any():
            lucky = self.loss_rng.random(int(shadow.sum())) >= world.lm.shadow_loss
            idx = np.flatnonzero(shadow)
            cls[idx[lucky]] = RegionClass.CLEAR
            shadow = cls == RegionClass.SHADOWED
        clear = cand[cls == RegionClass.CLEAR]
        n_sh = int(shadow.sum())
        hit = np.zeros(clear.size, dtype=bool)
        if clear.size:
            # every interferer is checked against every clear receiver in one batch
            srcs = []
            for b in self.active:
                if b is att or not (b.start < att.end and att.start < b.end):
                    continue
                hit |= clear == b.sender
                srcs.append(world.positions_at(b.start)[b.sender])
            if self.beacons:
                srcs.extend(pos[self._hidden_beacons(i, att, pos)])
            if srcs:
                hit |= self._hears_any(np.asarray(srcs, dtype=float), pos[clear])
        delivered = clear[~hit]
        n_col = int(hit.sum())
        t = self.tallies
        t.delivered += delivered.size
        t.collided += n_col
        t.shadow_blocked += n_sh
        row = t.by_tag.setdefault(frame.tag, [0, 0, 0, 0])
        row[0] += delivered.size
        row[1] += n_col
        row[2] += n_sh
        row[3] += 1
        return delivered, n_col, n_sh

    def _hidden_beacons(self, sender: int, att: _Active, pos: np.ndarray) -> np.ndarray:
        """Nodes whose beacon overlaps the attempt while they cannot hear its sender."""
        P, tb = self.mac.beacon_interval, self.t_b
        ph = self.phase
        k = np.floor((att.start - tb - ph) / P) + 1
        s = ph + k * P
        d = np.hypot(pos[:, 0] - pos[sender, 0], pos[:, 1] - pos[sender, 1])
        # farther than two ranges away nobody in the sender's range can hear it
        on_air = (s < att.end) & (d <= 2 * self.world.lm.t_base)
        on_air[sender] = False
        if not on_air.any():
            return np.zeros(0, dtype=np.intp)
        sender_cls = self.world.sense_classes(sender, att.start)
        return np.flatnonzero(on_air & (sender_cls != RegionClass.CLEAR))

    def _hears_any(self, srcs: np.ndarray, rx: np.ndarray) -> np.ndarray:
        """For each receiver, whether any source reaches it over a clear link."""
        m = rx.shape[0]
        a = np.repeat(srcs, m, axis=0)
        b = np.tile(rx, (srcs.shape[0], 1))
        cls = self.world.obstacles.classify_pairs(a, b, self.world.lm)
        return (cls.reshape(srcs.shape[0], m) == RegionClass.CLEAR).any(axis=0)
