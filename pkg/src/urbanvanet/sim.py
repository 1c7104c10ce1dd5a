"""One simulation run: world view, workload and the protocol state machines.

Node indices cover vehicles first (sorted by id, buses included) and RSUs
after them. Cars originate and receive messages; buses serve as cloud
gateways; RSUs relay in V2I mode.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .channel import Channel, Frame, MacParams
from .engine import Engine, EventKind
from .errors import ConfigError
from .geometry import LinkModel, Obstacle, ObstacleArray, RegionClass
from .metrics import RecordTable, MetricsRecord, DELIVERED, UNDELIVERED
from .mobility import Trace, TraceSample, is_bus
from .protocols import (CloudModel, DisseminationMode, Message, Protocol, ProtocolParams,
                        coverage_matrix, greedy_max_coverage, mode_from_classes)
from .rng import substream

CLEAR = RegionClass.CLEAR
OUT = RegionClass.OUT_OF_RANGE
SHADOWED = RegionClass.SHADOWED
CAR, BUS, RSU = 0, 1, 2


@dataclass(frozen=True)
class Workload:
    # messages per second per car
    rate_per_vehicle: float = 0.1
    target_radius: float = 1000.0
    # no new messages in the last `drain` seconds of a run
    drain: float = 2.0

    def __post_init__(self):
        if self.rate_per_vehicle < 0:
            raise ConfigError("must be >= 0", "workload.rate_per_vehicle")
        if self.target_radius <= 0:
            raise ConfigError("must be > 0", "workload.target_radius")
        if self.drain < 0:
            raise ConfigError("must be >= 0", "workload.drain")


class World:
    """Positions and tick-cached link classes for every node."""

    def __init__(self, trace: Trace, rsus: Sequence, obstacles: Sequence[Obstacle],
                 lm: LinkModel, tick: float, t_end: float, sense_range: float | None = None,
                 bus_sense_clear: bool = False):
        vids = list(trace.vehicle_ids)
        self.n_veh = len(vids)
        self.ids = vids + [f"rsu{k:03d}" for k in range(len(rsus))]
        self.n = len(self.ids)
        self.kind = np.full(self.n, CAR, dtype=np.int8)
        for i, v in enumerate(vids):
            if is_bus(v):
                self.kind[i] = BUS
        self.kind[self.n_veh:] = RSU
        self.is_car = self.kind == CAR
        self.is_bus = self.kind == BUS
        self.is_rsu = self.kind == RSU
        self.car_idx = np.flatnonzero(self.is_car)
        self.bus_idx = np.flatnonzero(self.is_bus)
        self.rsu_idx = np.flatnonzero(self.is_rsu)
        self.rsu_xy = np.asarray(rsus, dtype=float).reshape(-1, 2)
        self.dense = trace.densify(tick, t_end)
        self.tick = tick
        self.obstacle_list = list(obstacles)
        self.obstacles = ObstacleArray(self.obstacle_list)
        self.lm = lm
        self.bus_sense_clear = bus_sense_clear
        self.sense_lm = lm if sense_range in (None, lm.t_base) else LinkModel(
            sense_range, lm.clearance_delta, lm.shadow_loss)
        self._pos: OrderedDict = OrderedDict()
        self._cls: dict = {}
        self._cls_tick = -1

    def positions_at(self, t: float) -> np.ndarray:
        hit = self._pos.get(t)
        if hit is not None:
            return hit
        veh = self.dense.positions_at(t)
        out = np.vstack([veh, self.rsu_xy]) if self.rsu_xy.size else np.array(veh)
        self._pos[t] = out
        if len(self._pos) > 16:
            self._pos.popitem(last=False)
        return out

    def tick_of(self, t: float) -> int:
        return int(math.floor(t / self.tick + 1e-9))

    def link_classes(self, i: int, t: float) -> np.ndarray:
        """Classes from node i to all nodes, as of the last beacon tick."""
        return self._classes(i, t, self.lm, 0)

    def sense_classes(self, i: int, t: float) -> np.ndarray:
        """Like :meth:`link_classes` but out to the carrier-sense range."""
        if self.sense_lm is self.lm and not self.bus_sense_clear:
            return self._classes(i, t, self.lm, 0)
        return self._classes(i, t, self.sense_lm, 1)

    def _classes(self, i: int, t: float, lm: LinkModel, which: int) -> np.ndarray:
        k = self.tick_of(t)
        if k > self._cls_tick:
            self._cls = {key: v for key, v in self._cls.items() if key[0] >= k - 1}
            self._cls_tick = k
        c = self._cls.get((k, which, i))
        if c is None:
            pos = self.positions_at(k * self.tick)
            if np.isnan(pos[i, 0]):
                c = np.full(self.n, OUT, dtype=np.int8)
            else:
                c = self.obstacles.classify_from(pos[i], pos, lm)
                if which == 1 and self.bus_sense_clear:
                    # roof antennas sense over buildings within transmission range
                    d = np.hypot(pos[:, 0] - pos[i, 0], pos[:, 1] - pos[i, 1])
                    near = (c == SHADOWED) & (d <= self.lm.t_base)
                    if not self.is_bus[i]:
                        near &= self.is_bus
                    c[near] = CLEAR
            self._cls[k, which, i] = c
        return c

    def table_positions(self, t: float) -> np.ndarray:
        return self.positions_at(self.tick_of(t) * self.tick)


@dataclass
class _State:
    msg: Message
    src: int
    origin: np.ndarray
    targets: np.ndarray
    slot: dict
    mode: DisseminationMode
    delivered_at: np.ndarray
    hops: np.ndarray
    via: list
    have: np.ndarray
    broadcasters: set = field(default_factory=set)
    escalated: bool = False
    v2i: bool = False
    uncovered: int = 0

    @property
    def done(self) -> bool:
        return self.uncovered == 0


@dataclass
class RunResult:
    protocol: str
    seed: int
    duration: float
    n_vehicles: int
    records: RecordTable
    tallies: object
    messages: list
    initial_modes: dict
    log: list
    world: World

    def metrics_records(self) -> list[MetricsRecord]:
        out = []
        ids = self.world.ids
        for st in self.messages:
            for j, tgt in enumerate(st.targets):
                d = st.delivered_at[j]
                ok = not math.isnan(d)
                out.append(MetricsRecord(
                    st.msg.id, st.msg.source, ids[tgt], DELIVERED if ok else UNDELIVERED,
                    st.msg.created_at, float(d) if ok else None, int(st.hops[j]),
                    st.via[j], st.msg.payload_size))
        return out


class Simulation:
    def __init__(self, trace: Trace, rsus: Sequence, obstacles: Sequence[Obstacle], *,
                 protocol: Protocol | str, seed: int, duration: float,
                 lm: LinkModel = LinkModel(), mac: MacParams = MacParams(),
                 cloud: CloudModel = CloudModel(), params: ProtocolParams = ProtocolParams(),
                 workload: Workload = Workload(), keep_log: bool = True):
        if not duration > 0:
            raise ConfigError("must be > 0", "run.duration")
        self.protocol = Protocol(protocol)
        self.seed = seed
        self.duration = duration
        self.mac, self.cloud, self.params, self.workload = mac, cloud, params, workload
        self.world = World(trace, rsus, obstacles, lm, mac.beacon_interval, duration,
                           mac.cs_range, mac.elevated_bus_sensing)
        self.log: list | None = [] if keep_log else None
        self.engine = Engine(self.log)
        w = self.world
        phase = substream(seed, "beacons").uniform(0.0, mac.beacon_interval, w.n)
        self.channel = Channel(self.engine, w, mac, substream(seed, "mac-backoff"),
                               substream(seed, "channel"), phase)
        self.cloud_rng = substream(seed, "cloud")
        self.jitter_rng = substream(seed, "forward-jitter")
        self.cloud_used = False
        self.states: list[_State] = []
        self.engine.on(EventKind.MESSAGE_ORIGINATION, self._originate)
        self.engine.on(EventKind.BEACON_TICK, self._tick)
        self._schedule_workload()
        n_ticks = int(math.floor(duration / mac.beacon_interval + 1e-9))
        for k in range(1, n_ticks + 1):
            t = k * mac.beacon_interval
            if t < duration:
                self.engine.schedule(t, EventKind.BEACON_TICK, k)
        self.engine.schedule(duration, EventKind.SIM_END)

    # -- workload ---------------------------------------------------------
    def _schedule_workload(self) -> None:
        rng = substream(self.seed, "workload")
        split = substream(self.seed, "split")
        rate = self.workload.rate_per_vehicle * self.world.car_idx.size
        t_stop = self.duration - self.workload.drain
        self._next_mid = 0
        if rate <= 0 or t_stop <= 0:
            return
        t, mid = 0.0, 0
        while True:
            t += float(rng.exponential(1.0 / rate))
            if t >= t_stop:
                break
            self.engine.schedule(t, EventKind.MESSAGE_ORIGINATION,
                                 (mid, float(rng.random()), float(split.random())))
            mid += 1
        self._next_mid = mid

    def inject(self, time: float, source: str, targets: Sequence[str] | None = None,
               split_u: float = 1.0) -> int:
        """Schedule one extra message from ``source``; returns its id.

        ``targets`` defaults to every car within the workload's target radius
        at origination. ``split_u`` is the static-split comparator's draw.
        """
        w = self.world
        index = {v: k for k, v in enumerate(w.ids)}
        try:
            src = index[source]
            tg = None if targets is None else np.array([index[v] for v in targets], dtype=np.intp)
        except KeyError as e:
            raise ConfigError(f"unknown node {e.args[0]!r}", "inject") from None
        mid = self._next_mid
        self._next_mid += 1
        self.engine.schedule(time, EventKind.MESSAGE_ORIGINATION, (mid, src, split_u, tg))
        return mid

    def _tick(self, ev):
        return f"k={ev.payload}"

    # -- origination ------------------------------------------------------
    def _originate(self, ev):
        mid, u, split_u, *given = ev.payload
        w = self.world
        t = self.engine.now
        pos = w.positions_at(t)
        cars = w.car_idx[~np.isnan(pos[w.car_idx, 0])]
        if given:
            src = u
            if np.isnan(pos[src, 0]):
                return f"m={mid} skip"
        elif cars.size == 0:
            return f"m={mid} skip"
        else:
            src = int(cars[min(int(u * cars.size), cars.size - 1)])
        if given and given[0] is not None:
            targets = given[0][~np.isnan(pos[given[0], 0])]
        else:
            d = np.hypot(pos[cars, 0] - pos[src, 0], pos[cars, 1] - pos[src, 1])
            targets = cars[(d <= self.workload.target_radius) & (cars != src)]
        mode = self._initial_mode(src, t, split_u)
        n = targets.size
        msg = Message(mid, w.ids[src], self.mac.msg_size, t,
                      frozenset(w.ids[k] for k in targets))
        msg.record_hop(w.ids[src], t, f"originate {mode.value}")
        st = _State(msg, src, pos[src].copy(), targets, {int(k): j for j, k in enumerate(targets)},
                    mode, np.full(n, np.nan), np.zeros(n, dtype=np.int32), [mode.value] * n,
                    np.zeros(w.n, dtype=bool), uncovered=n)
        st.have[src] = True
        self.states.append(st)
        note = f"m={mid} src={src} mode={mode.value} tg={','.join(map(str, targets.tolist()))}"
        if n == 0:
            return note
        if mode is DisseminationMode.CLOUD_GATEWAY:
            st.escalated = True
            self._cloud_start(st, src, 0, 0)
        elif self.protocol is Protocol.HYBRID:
            st.v2i = mode is DisseminationMode.MULTIHOP_V2I
            self._hybrid_forward(st, src, 1)
        else:
            self._clbp_broadcast(st, src, 1)
        return note

    def _initial_mode(self, src: int, t: float, split_u: float) -> DisseminationMode:
        p = self.protocol
        if p is Protocol.CMDS_LIKE:
            return DisseminationMode.CLOUD_GATEWAY
        if p is Protocol.CLBP_LIKE:
            return DisseminationMode.MULTIHOP_V2V
        if p is Protocol.CLOUDVANET_LIKE:
            return (DisseminationMode.CLOUD_GATEWAY if split_u < self.params.cloud_split
                    else DisseminationMode.MULTIHOP_V2V)
        w = self.world
        cls = w.link_classes(src, t)
        return mode_from_classes(cls[w.car_idx], cls[w.rsu_idx], self.params.threshold)

    # -- delivery bookkeeping ---------------------------------------------
    def _mark(self, st: _State, nodes: np.ndarray, t: float, hop: int, via: str) -> list[int]:
        new = []
        for r in nodes.tolist():
            if st.have[r]:
                continue
            st.have[r] = True
            j = st.slot.get(r)
            if j is not None:
                st.delivered_at[j] = t
                st.hops[j] = hop
                st.via[j] = via
                st.uncovered -= 1
                new.append(r)
        return new

    def _far_target(self, st: _State, t: float):
        pos = self.world.positions_at(t)
        unc = st.targets[np.isnan(st.delivered_at)]
        p = pos[unc]
        ok = ~np.isnan(p[:, 0])
        if not ok.any():
            return None
        p = p[ok]
        d = np.hypot(p[:, 0] - st.origin[0], p[:, 1] - st.origin[1])
        return p[int(np.argmax(d))]

    def _new_note(self, st: _State, new: list[int]) -> str:
        return f"new={','.join(map(str, new))}" if new else ""

    # -- hybrid multi-hop -------------------------------------------------
    def _pick_relay(self, st: _State, holder: int, t: float, received_only: bool = False):
        w = self.world
        far = self._far_target(st, t)
        if far is None:
            return None
        cls = w.link_classes(holder, t)
        ok = (cls == CLEAR) & (w.is_car | (w.is_rsu & st.v2i))
        if received_only:
            ok &= st.have
        if st.broadcasters:
            ok[list(st.broadcasters)] = False
        cand = np.flatnonzero(ok)
        if cand.size == 0:
            return None
        tp = w.table_positions(t)
        d = np.hypot(tp[cand, 0] - far[0], tp[cand, 1] - far[1])
        hp = w.positions_at(t)[holder]
        j = int(np.argmin(d))
        if not d[j] < math.hypot(hp[0] - far[0], hp[1] - far[1]):
            return None
        return int(cand[j])

    def _hybrid_forward(self, st: _State, holder: int, hop: int) -> None:
        t = self.engine.now
        if st.done or holder in st.broadcasters:
            return
        if hop > self.params.ttl:
            self._stuck(st, holder, hop - 1, "ttl")
            return
        relay = self._pick_relay(st, holder, t)
        st.broadcasters.add(holder)
        st.msg.record_hop(self.world.ids[holder], t, f"broadcast hop={hop}")
        frame = Frame(st.msg.id, holder, partial(self._hybrid_result, st, hop, relay),
                      required=relay, retries=self.mac.retries if relay is not None else 0,
                      tag="mh")
        self.channel.send(frame)

    def _hybrid_result(self, st, hop, relay, frame, t, delivered, ok, final):
        new = self._mark(st, delivered, t, hop, st.mode.value if not st.v2i
                         else DisseminationMode.MULTIHOP_V2I.value)
        note = self._new_note(st, new)
        if not final or st.done:
            return note
        holder = frame.sender
        if relay is not None and ok:
            wait = 0.0
            if self.params.forward_jitter > 0:
                wait = float(self.jitter_rng.uniform(0.0, self.params.forward_jitter))
            self.engine.call_at(self.engine.now + wait, EventKind.RETRY_TIMER, "relay",
                                self._hybrid_forward, st, relay, hop + 1)
        else:
            self.engine.call_at(self.engine.now, EventKind.RETRY_TIMER, "stuck",
                                self._stuck, st, holder, hop, "no-relay")
        return note

    def _stuck(self, st: _State, holder: int, hop: int, why: str):
        """Re-run mode selection over neighbours that do not hold the message yet."""
        if st.done:
            return "done"
        w = self.world
        t = self.engine.now
        cls = w.link_classes(holder, t).copy()
        cls[st.have] = OUT
        mode = mode_from_classes(cls[w.car_idx], cls[w.rsu_idx], self.params.threshold)
        if mode is DisseminationMode.MULTIHOP_V2I and not st.v2i and why != "ttl":
            st.v2i = True
            relay = self._pick_relay(st, holder, t, received_only=True)
            if relay is not None:
                st.msg.record_hop(w.ids[holder], t, "switch MultiHopV2I")
                self._hybrid_forward(st, relay, hop + 1)
                return f"m={st.msg.id} v2i"
        if st.escalated:
            st.msg.record_hop(w.ids[holder], t, f"stuck {why}")
            return f"m={st.msg.id} {why} giveup"
        st.escalated = True
        st.msg.record_hop(w.ids[holder], t, "escalate CloudGateway")
        self._cloud_start(st, holder, 0, hop)
        return f"m={st.msg.id} {why} escalate"

    # -- contention-based multi-hop (comparators) -------------------------
    def _clbp_broadcast(self, st: _State, holder: int, hop: int):
        if st.done or holder in st.broadcasters:
            return None
        st.broadcasters.add(holder)
        st.msg.record_hop(self.world.ids[holder], self.engine.now, f"broadcast hop={hop}")
        self.channel.send(Frame(st.msg.id, holder, partial(self._clbp_result, st, hop), tag="cb"))
        return None

    def _clbp_result(self, st, hop, frame, t, delivered, ok, final):
        new = self._mark(st, delivered, t, hop, DisseminationMode.MULTIHOP_V2V.value)
        note = self._new_note(st, new)
        if st.done or hop >= self.params.ttl:
            return note
        w = self.world
        far = self._far_target(st, t)
        if far is None:
            return note
        cand = delivered[w.is_car[delivered]]
        if st.broadcasters:
            cand = cand[~np.isin(cand, list(st.broadcasters))]
        if cand.size == 0:
            return note
        pos = w.positions_at(t)
        sp = pos[frame.sender]
        base = math.hypot(sp[0] - far[0], sp[1] - far[1])
        prog = base - np.hypot(pos[cand, 0] - far[0], pos[cand, 1] - far[1])
        j = int(np.argmax(prog))
        if not prog[j] > 0:
            return note
        p = self.params
        r = w.lm.t_base
        wait = p.election_min + (p.election_max - p.election_min) * (1.0 - min(prog[j], r) / r)
        self.engine.call_at(self.engine.now + wait, EventKind.RETRY_TIMER, "elect",
                            self._clbp_broadcast, st, int(cand[j]), hop + 1)
        return note

    # -- cloud path -------------------------------------------------------
    def _cloud_start(self, st: _State, holder: int, tries: int, hop: int):
        if st.done:
            return "done"
        w = self.world
        t = self.engine.now
        if w.is_bus[holder]:
            self._uplink(st, hop, t)
            return None
        cls = w.link_classes(holder, t)
        gws = w.bus_idx[cls[w.bus_idx] == CLEAR]
        if gws.size == 0:
            return self._cloud_retry(st, holder, tries, hop, "no-gateway")
        tp = w.table_positions(t)
        d = np.hypot(tp[gws, 0] - tp[holder, 0], tp[gws, 1] - tp[holder, 1])
        gw = int(gws[int(np.argmin(d))])
        st.msg.record_hop(w.ids[holder], t, f"uplink to {w.ids[gw]}")
        self.channel.send(Frame(st.msg.id, holder,
                                partial(self._uplink_sent, st, holder, tries, hop),
                                dest=gw, required=gw, retries=self.mac.retries, tag="up"))
        return None

    def _cloud_retry(self, st, holder, tries, hop, why):
        if tries < self.cloud.max_retries:
            self.engine.call_at(self.engine.now + self.cloud.retry_interval, EventKind.RETRY_TIMER,
                                "cloud-retry", self._cloud_start, st, holder, tries + 1, hop)
            return f"m={st.msg.id} {why}"
        st.msg.record_hop(self.world.ids[holder], self.engine.now, "cloud unreachable")
        return f"m={st.msg.id} {why} giveup"

    def _uplink_sent(self, st, holder, tries, hop, frame, t, delivered, ok, final):
        if not final:
            return None
        if not ok:
            return self._cloud_retry(st, holder, tries, hop, "uplink-failed")
        self._uplink(st, hop + 1, t)
        return None

    def _uplink(self, st: _State, hop: int, t: float) -> None:
        c = self.cloud
        delay = c.uplink_delay
        if c.uplink_jitter > 0:
            delay += float(self.cloud_rng.uniform(0.0, c.uplink_jitter))
        if not self.cloud_used:
            self.cloud_used = True
            delay += c.deploy_delay
        self.engine.call_at(t + delay, EventKind.CLOUD_LEG, "uplink", self._cloud_process, st, hop)

    def _cloud_process(self, st, hop):
        self.engine.call_at(self.engine.now + self.cloud.processing_delay, EventKind.CLOUD_LEG,
                            "process", self._cloud_dispatch, st, hop)
        return f"m={st.msg.id}"

    def _cloud_dispatch(self, st: _State, hop: int):
        if st.done:
            return f"m={st.msg.id} done"
        w = self.world
        t = self.engine.now
        pos = w.positions_at(t)
        unc = st.targets[np.isnan(st.delivered_at)]
        unc = unc[~np.isnan(pos[unc, 0])]
        buses = w.bus_idx[~np.isnan(pos[w.bus_idx, 0])]
        if unc.size == 0 or buses.size == 0:
            return f"m={st.msg.id} gw=none"
        cover = coverage_matrix(pos[buses], pos[unc], w.obstacles, w.lm)
        slot = self.mac.slot_time
        access = [self.channel.queue_length(int(b)) * self.channel.duration
                  + (self.mac.cw_min / 2.0) * slot for b in buses]
        picked = greedy_max_coverage(cover, access, [w.ids[b] for b in buses], self.cloud.k_max)
        c = self.cloud
        for r in picked:
            gw = int(buses[r])
            delay = c.downlink_delay
            if c.downlink_jitter > 0:
                delay += float(self.cloud_rng.uniform(0.0, c.downlink_jitter))
            self.engine.call_at(t + delay, EventKind.CLOUD_LEG, "downlink",
                                self._gateway_broadcast, st, gw, hop + 1)
        return f"m={st.msg.id} gw={','.join(str(int(buses[r])) for r in picked)}"

    def _gateway_broadcast(self, st: _State, gw: int, hop: int):
        if st.done:
            return f"m={st.msg.id} done"
        st.have[gw] = True
        st.msg.record_hop(self.world.ids[gw], self.engine.now, "gateway broadcast")
        self.channel.send(Frame(st.msg.id, gw, partial(self._gateway_result, st, hop), tag="dn"))
        return f"m={st.msg.id}"

    def _gateway_result(self, st, hop, frame, t, delivered, ok, final):
        new = self._mark(st, delivered, t, hop, DisseminationMode.CLOUD_GATEWAY.value)
        return self._new_note(st, new)

    # -- run --------------------------------------------------------------
    def run(self) -> RunResult:
        self.engine.run()
        return RunResult(
            protocol=self.protocol.value, seed=self.seed, duration=self.duration,
            n_vehicles=int(self.world.n_veh), records=self.record_table(),
            tallies=self.channel.tallies, messages=self.states,
            initial_modes=self.mode_counts(), log=self.log, world=self.world)

    def record_table(self) -> RecordTable:
        if not self.states:
            return RecordTable([], [], [])
        created = np.concatenate([np.full(s.targets.size, s.msg.created_at) for s in self.states])
        delivered = np.concatenate([s.delivered_at for s in self.states])
        size = np.concatenate([np.full(s.targets.size, float(s.msg.payload_size))
                               for s in self.states])
        return RecordTable(created, delivered, size)

    def mode_counts(self) -> dict:
        out: dict = {}
        for s in self.states:
            out[s.mode.value] = out.get(s.mode.value, 0) + 1
        return out
