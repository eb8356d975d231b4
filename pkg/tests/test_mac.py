import math

import numpy as np
import pytest

from mtdlearn.analytics import expected_delay_no_learning, s_max
from mtdlearn.mac import (
    RESERVED_CODE,
    EpisodeTruncated,
    TrafficState,
    choose_alarm_holder,
    format_slot_trace,
    pick_codes,
    resolve_codes,
    run_episode,
    schedule_phases,
    simulate_slot,
)
from mtdlearn.params import SystemParams
from mtdlearn.topology import sample_deployment


class FixedUniforms:
    """Stand-in generator that hands out preset uniforms."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def random(self, n):
        assert n == len(self.values)
        return self.values


def test_t1_every_node_active_every_slot():
    p = SystemParams(T=1)
    topo = sample_deployment(p, np.random.default_rng(0), fixed_n=30)
    for phases in ("balanced", "independent"):
        traffic = schedule_phases(topo, p, np.random.default_rng(1), phases=phases)
        for slot in range(1, 5):
            assert sorted(traffic.periodic_active(slot, 1).tolist()) == list(range(30))


@pytest.mark.parametrize("phases", ["balanced", "independent"])
def test_mean_active_per_slot(phases):
    p = SystemParams()
    topo = sample_deployment(p, np.random.default_rng(0), fixed_n=2000)
    rng = np.random.default_rng(3)
    counts = []
    # fresh phases every period so the average covers the phase randomness
    for _ in range(500):
        traffic = schedule_phases(topo, p, rng, phases=phases)
        counts += [len(traffic.periodic_active(s, p.T)) for s in range(1, p.T + 1)]
    assert len(counts) == 10_000
    assert np.mean(counts) == pytest.approx(100, abs=1)


def test_balanced_phases_are_even_and_uniform():
    p = SystemParams()
    topo = sample_deployment(p, np.random.default_rng(0), fixed_n=201)
    rng = np.random.default_rng(9)
    hits = np.zeros(p.T + 1)
    for _ in range(2000):
        traffic = schedule_phases(topo, p, rng, alarm_holder=0)
        loads = [len(traffic.periodic_active(s, p.T)) for s in range(1, p.T + 1)]
        others = np.bincount(np.delete(traffic.phase, 0), minlength=p.T + 1)[1:]
        assert set(others.tolist()) <= {10}
        assert 1 <= min(traffic.phase) and max(traffic.phase) <= p.T
        assert sum(loads) == 201
        hits[traffic.phase[5]] += 1
    # a single node's phase is uniform on 1..T
    assert np.all(np.abs(hits[1:] / 2000 - 1 / p.T) < 0.02)


def test_phase_mode_rejected():
    p = SystemParams()
    topo = sample_deployment(p, np.random.default_rng(0), fixed_n=3)
    with pytest.raises(ValueError):
        schedule_phases(topo, p, np.random.default_rng(0), phases="bursty")


@pytest.mark.parametrize("codes, want", [([3, 3], [False, False]), ([3, 7], [True, True]), ([0, 0, 5], [False, False, True])])
def test_resolve_codes(codes, want):
    assert resolve_codes(np.array(codes), 15).tolist() == want


def test_alarm_collides_with_periodic_on_reserved_code():
    p = SystemParams(T=1)
    traffic = TrafficState(np.array([1, 1]), alarm_holder=1, alarm_onset=1)
    # node 0 draws uniform 0.01, which maps to code 0 when not learned
    out = simulate_slot(traffic, np.zeros(2, dtype=bool), p, FixedUniforms([0.01]), slot=1)
    assert out.alarm_active
    assert out.codes.tolist() == [0, RESERVED_CODE]
    assert not out.alarm_success
    assert out.successes == set()


def test_learned_node_leaves_the_alarm_alone():
    p = SystemParams(T=1)
    traffic = TrafficState(np.array([1, 1]), alarm_holder=1, alarm_onset=1)
    out = simulate_slot(traffic, np.array([True, False]), p, FixedUniforms([0.01]), slot=1)
    assert out.codes[0] != RESERVED_CODE
    assert out.alarm_success
    assert out.successes == {0, 1}
    assert out.n_periodic_success == 1


def test_pick_codes_ranges():
    u = np.random.default_rng(0).random(100_000)
    plain = pick_codes(u, np.zeros(len(u), dtype=bool), 15)
    learned = pick_codes(u, np.ones(len(u), dtype=bool), 15)
    assert set(plain.tolist()) == set(range(15))
    assert set(learned.tolist()) == set(range(1, 15))
    assert pick_codes(np.array([1.0 - 1e-17]), np.array([False]), 15).tolist() == [14]


def test_holder_is_nearest_node():
    p = SystemParams(lam=0.2)
    topo = sample_deployment(p, np.random.default_rng(1), abnormality_pos=(3.0, 44.0))
    holder = choose_alarm_holder(topo)
    assert holder == int(np.argmin(topo.distance_to_abnormality()))


def test_single_node_alarm_delay_is_one():
    m = run_episode(SystemParams(), "no_learning", 0, fixed_n=1)
    assert m.alarm_delay == 1
    assert m.n_nodes == 1


def test_no_learning_delay_small_network():
    p = SystemParams()
    delays = np.array([run_episode(p, "no_learning", s, fixed_n=200).alarm_delay for s in range(3000)])
    se = delays.std(ddof=1) / math.sqrt(len(delays))
    assert abs(delays.mean() - expected_delay_no_learning(p.with_(N=200))) <= 3 * se


@pytest.fixture(scope="module")
def recorded_episodes():
    p = SystemParams(lam=0.3, K=6)
    return p, [run_episode(p, "finite_memory", s, record_slots=True) for s in range(6)]


def test_unique_code_rule_by_recount(recorded_episodes):
    p, episodes = recorded_episodes
    for m in episodes:
        for out in m.slots:
            counts = {}
            for c in out.codes.tolist():
                counts[c] = counts.get(c, 0) + 1
            want = {n for n, c in out.code_choice.items() if counts[c] == 1}
            assert out.successes == want
            assert out.successes <= set(out.active.tolist())
            assert len(out.successes) <= s_max(len(out.active), p.C)


def test_learned_nodes_avoid_reserved_code(recorded_episodes):
    _, episodes = recorded_episodes
    for m in episodes:
        for out in m.slots:
            periodic_codes = out.codes[:-1] if out.alarm_active else out.codes
            periodic_learned = out.learned_active[:-1] if out.alarm_active else out.learned_active
            assert np.all(periodic_codes[periodic_learned] != RESERVED_CODE)
            if out.alarm_active:
                assert out.codes[-1] == RESERVED_CODE


def test_metrics_invariants(recorded_episodes):
    p, episodes = recorded_episodes
    for m in episodes:
        assert m.alarm_delay >= 1
        assert all(0.0 <= f <= 1.0 for f in m.learned_fraction_series)
        assert 0.0 <= m.learned_fraction_final <= 1.0
        assert len(m.throughput_series) == len(m.slots)
        assert m.throughput_baseline == pytest.approx(np.mean(m.throughput_series[: p.T]))


def test_holder_transmits_every_slot_after_onset(recorded_episodes):
    p, episodes = recorded_episodes
    for m in episodes:
        onset = p.T + 1
        assert all(out.alarm_active == (out.slot >= onset) for out in m.slots)
        assert sum(out.alarm_success for out in m.slots) >= 1


def test_learning_lowers_delay_on_paired_seeds():
    p = SystemParams(lam=0.5, K=7)
    diffs = []
    for s in range(500):
        nl = run_episode(p, "no_learning", s).alarm_delay
        fm = run_episode(p, "finite_memory", s).alarm_delay
        diffs.append(fm - nl)
    diffs = np.array(diffs, dtype=float)
    upper = diffs.mean() + 1.96 * diffs.std(ddof=1) / math.sqrt(len(diffs))
    assert upper <= 0


def test_modes_share_deployment_and_baseline():
    p = SystemParams(lam=0.3)
    a = run_episode(p, "no_learning", 5)
    b = run_episode(p, "finite_memory", 5)
    c = run_episode(p.with_(K=12), "infinite_memory", 5)
    assert a.n_nodes == b.n_nodes == c.n_nodes
    assert a.throughput_baseline == b.throughput_baseline == c.throughput_baseline


def test_no_learning_never_learns():
    m = run_episode(SystemParams(lam=0.3), "no_learning", 1)
    assert m.learned_fraction_final == 0.0
    assert set(m.learned_fraction_series) == {0.0}


def test_episode_cap_raises_with_partial_metrics():
    p = SystemParams(lam=0.8)
    with pytest.raises(EpisodeTruncated) as info:
        run_episode(p, "no_learning", 0, episode_cap=1, fixed_n=2000)
    assert info.value.metrics.truncated
    assert info.value.cap == 1


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        run_episode(SystemParams(), "gossip", 0, fixed_n=1)


def test_trace_table():
    m = run_episode(SystemParams(T=2), "finite_memory", 0, fixed_n=3, trace=True)
    lines = format_slot_trace(m.slot_trace).splitlines()
    assert lines[0] == "slot\tn_active\tn_success\talarm_active\talarm_success"
    assert len(lines) == 1 + len(m.throughput_series)
