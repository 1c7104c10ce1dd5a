from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from urbanvanet.channel import (MacParams, RxOutcome, TxAttempt, draw_backoff, next_cw,
                                resolve_receptions, tx_duration)
from urbanvanet.errors import ConfigError, SimulationIntegrityError
from urbanvanet.geometry import LinkModel, Obstacle, Point
from urbanvanet.mobility import Trace, TraceSample
from urbanvanet.sim import Simulation, Workload

LM = LinkModel()
P = MacParams()


def test_tx_duration_examples():
    assert tx_duration(MacParams(msg_size=256, data_rate=2e6)) == pytest.approx(1.024e-3)
    assert tx_duration(MacParams(msg_size=512, data_rate=2e6)) == pytest.approx(2.048e-3)
    with pytest.raises(ConfigError):
        MacParams(msg_size=0)


def test_backoff_degenerate_and_deterministic():
    rng = np.random.default_rng(1)
    assert draw_backoff(rng, 0) == 0
    a = np.random.default_rng(99)
    b = np.random.default_rng(99)
    assert draw_backoff(a, 31) == draw_backoff(b, 31)


def test_backoff_is_uniform_over_window():
    rng = np.random.default_rng(2024)
    draws = np.array([draw_backoff(rng, 31) for _ in range(100_000)])
    assert abs(draws.mean() - 15.5) <= 0.2
    counts = np.bincount(draws, minlength=32)
    assert counts.size == 32
    assert stats.chisquare(counts).pvalue > 1e-3


def test_contention_window_doubles_and_caps():
    assert next_cw(31, P) == 63
    assert next_cw(511, P) == 1023
    assert next_cw(1023, P) == 1023


def att(sender, start, dur=1e-3, mid=0):
    return TxAttempt(sender, mid, start, start + dur)


def test_single_attempt_clear_receiver_delivers():
    out = resolve_receptions([att("a", 0.0)], ["a", "b"], {"a": Point(0, 0), "b": Point(100, 0)},
                             [], LM, P)
    assert out == {(0, "b"): RxOutcome.DELIVERED}


def test_identical_attempts_both_collide():
    pos = {"a": Point(0, 0), "b": Point(200, 0), "r": Point(100, 0)}
    out = resolve_receptions([att("a", 0.0), att("b", 0.0)], ["r"], pos, [], LM, P)
    assert out[0, "r"] is RxOutcome.COLLIDED
    assert out[1, "r"] is RxOutcome.COLLIDED


def test_blocked_receiver_is_shadowed_and_shadow_does_not_interfere():
    pos = {"a": Point(0, 0), "b": Point(200, 0), "r": Point(100, 0)}
    wall = [Obstacle.from_bounds(140, -10, 160, 10)]
    out = resolve_receptions([att("a", 0.0), att("b", 0.0)], ["r"], pos, wall, LM, P)
    assert out[1, "r"] is RxOutcome.SHADOW_BLOCKED
    assert out[0, "r"] is RxOutcome.DELIVERED


def test_out_of_range_and_missing_positions():
    pos = {"a": Point(0, 0), "b": Point(400, 0)}
    out = resolve_receptions([att("a", 0.0)], ["b"], pos, [], LM, P)
    assert out[0, "b"] is RxOutcome.OUT_OF_RANGE
    with pytest.raises(SimulationIntegrityError):
        resolve_receptions([att("a", 0.0)], ["ghost"], pos, [], LM, P)
    with pytest.raises(SimulationIntegrityError):
        resolve_receptions([att("a", 1.0), att("b", 0.0)], ["b"], pos, [], LM, P)


def test_transmitting_receiver_cannot_decode():
    pos = {"a": Point(0, 0), "b": Point(100, 0)}
    out = resolve_receptions([att("a", 0.0), att("b", 0.5e-3)], ["a", "b"], pos, [], LM, P)
    assert out[0, "b"] is RxOutcome.COLLIDED and out[1, "a"] is RxOutcome.COLLIDED


xy = st.tuples(st.integers(0, 60), st.integers(0, 60)).map(lambda p: (p[0] * 10.0, p[1] * 10.0))


@settings(max_examples=100, deadline=None)
@given(st.lists(xy, min_size=2, max_size=11, unique=True), st.data())
def test_duplicating_an_attempt_never_reduces_collisions(points, data):
    n_s = data.draw(st.integers(1, len(points) - 1))
    starts = data.draw(st.lists(st.floats(0, 0.01), min_size=n_s, max_size=n_s))
    senders = list(zip(points[:n_s], starts))
    receivers = points[n_s:]
    pos = {f"s{k}": Point(*p) for k, (p, _) in enumerate(senders)}
    pos.update({f"r{k}": Point(*p) for k, p in enumerate(receivers)})
    attempts = sorted((att(f"s{k}", t) for k, (_, t) in enumerate(senders)),
                      key=lambda a: a.start)
    rx = [f"r{k}" for k in range(len(receivers))]
    wall = [Obstacle.from_bounds(250, 250, 350, 350)]
    base = resolve_receptions(attempts, rx, pos, wall, LM, P)
    extra = attempts[data.draw(st.integers(0, len(attempts) - 1))]
    more = sorted(attempts + [extra], key=lambda a: a.start)
    again = resolve_receptions(more, rx, pos, wall, LM, P)

    def collided(out):
        return sum(v is RxOutcome.COLLIDED for v in out.values())
    assert collided(again) >= collided(base)


def static_trace(points, duration, prefix="v"):
    rows = []
    for k, (x, y) in enumerate(points):
        rows.append(TraceSample(0.0, f"{prefix}{k:03d}", Point(x, y), 0.0))
        rows.append(TraceSample(duration, f"{prefix}{k:03d}", Point(x, y), 0.0))
    return rows


def test_single_sender_run_has_no_collisions():
    dur = 5.0
    trace = Trace(static_trace([(0, 0), (100, 0), (200, 0), (150, 80)], dur))
    sim = Simulation(trace, [], [], protocol="clbp-like", seed=3, duration=dur,
                     mac=MacParams(beacons=False), workload=Workload(rate_per_vehicle=0.0))
    sim.inject(0.5, "v000")
    res = sim.run()
    assert res.tallies.tx_count >= 1
    assert res.tallies.collided == 0


def test_simulator_channel_matches_reference_resolver():
    """Tallies from a static contention-heavy run equal the reference resolver's outcomes."""
    dur = 6.0
    rng = np.random.default_rng(11)
    pts = rng.uniform(0, 700, (25, 2))
    walls = [Obstacle.from_bounds(200, 200, 300, 300), Obstacle.from_bounds(450, 100, 520, 400)]
    trace = Trace(static_trace(pts, dur))
    mac = MacParams(beacons=False, cs_range=None)
    sim = Simulation(trace, [], walls, protocol="clbp-like", seed=5, duration=dur, mac=mac,
                     workload=Workload(rate_per_vehicle=2.0, drain=1.0))
    sim.channel.keep_attempts = True
    res = sim.run()
    attempts = sim.channel.attempt_log
    assert len(attempts) > 50
    pos = {f"v{k:03d}": Point(*p) for k, p in enumerate(pts)}
    out = resolve_receptions(attempts, list(pos), pos, walls, LM, mac)
    counts = {o: sum(v is o for v in out.values()) for o in RxOutcome}
    t = res.tallies
    assert t.collided > 0
    assert (counts[RxOutcome.DELIVERED], counts[RxOutcome.COLLIDED],
            counts[RxOutcome.SHADOW_BLOCKED]) == (t.delivered, t.collided, t.shadow_blocked)
