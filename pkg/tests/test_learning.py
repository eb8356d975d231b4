import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtdlearn import harness
from mtdlearn.learning import (
    LearningMessage,
    draw_private_signal,
    draw_private_signals,
    format_trace,
    infinite_memory_update,
    private_belief,
    private_belief_known,
    private_belief_unknown,
    propagate_step,
    root_message,
    run_propagation,
    seed_sequences,
    tq_update,
    update_state,
)
from mtdlearn.params import SystemParams
from mtdlearn.topology import Topology, neighbor_graph, sample_deployment


def make_topology(points, inside, r_c=2.0):
    pos = np.array(points, dtype=float).reshape(-1, 2)
    return Topology(pos, neighbor_graph(pos, r_c), (0.0, 0.0), np.array(inside, dtype=bool), 50.0)


def msg(signals, T=0, Q=0, prov=()):
    return LearningMessage(tuple(signals), T, Q, 0, tuple(prov))


# signals and beliefs

def test_signal_degenerate_probabilities():
    rng = np.random.default_rng(0)
    p = SystemParams(p11=1.0, p10=0.0)
    assert all(draw_private_signal(True, p, rng) == 1 for _ in range(100))
    assert all(draw_private_signal(False, p, rng) == 0 for _ in range(100))


def test_signal_rate_inside():
    rng = np.random.default_rng(1)
    draws = [draw_private_signal(True, SystemParams(), rng) for _ in range(100_000)]
    assert np.mean(draws) == pytest.approx(0.8, abs=0.01)


def test_vector_draw_under_no_abnormality_uses_p10():
    p = SystemParams(p11=1.0, p10=0.0)
    out = draw_private_signals(np.ones(50, dtype=bool), p, np.random.default_rng(0), theta=0)
    assert not out.any()


@pytest.mark.parametrize("signals, want", [([1], 1), ([0], 0), ([1, 0], 1), ([0, 0, 0, 0], 0)])
def test_lrt_examples(signals, want):
    assert private_belief_known(signals, 0.8, 0.001) == want


@pytest.mark.parametrize("p11, p10", [(1.0, 0.001), (0.8, 0.0)])
def test_lrt_rejects_degenerate_probabilities(p11, p10):
    with pytest.raises(ValueError):
        private_belief_known([1], p11, p10)


def test_beliefs_reject_empty():
    with pytest.raises(ValueError):
        private_belief_unknown([])
    with pytest.raises(ValueError):
        private_belief_known([], 0.8, 0.001)


@pytest.mark.parametrize("signals, want", [([0, 0, 0], 0), ([0, 1, 0], 1), ([1, 1, 1], 1)])
def test_or_rule_examples(signals, want):
    assert private_belief_unknown(signals) == want


def test_or_rule_exhaustive():
    for n in range(1, 17):
        for bits in itertools.product((0, 1), repeat=n):
            assert private_belief_unknown(bits) == int(1 in bits)


def test_lrt_matches_product_likelihood():
    result = harness.check_lrt_vs_ml(max_len=12)
    assert result.passed, result.counterexample


def test_private_belief_dispatch():
    p = SystemParams()
    assert private_belief([0, 1], p, "unknown") == 1
    assert private_belief([0, 0], p, "known") == 0
    with pytest.raises(ValueError):
        private_belief([1], p, "bayes")


# automaton and window

@pytest.mark.parametrize("T, Q, x, want", [
    (0, 0, 1, (0, 1)),
    (0, 1, 1, (1, 0)),
    (0, 0, 0, (0, 0)),
    (0, 1, 0, (0, 0)),
    (1, 0, 0, (1, 1)),
    (1, 1, 0, (0, 0)),
    (1, 1, 1, (1, 0)),
])
def test_automaton_table(T, Q, x, want):
    assert tq_update(T, Q, x) == want


@given(T=st.integers(0, 1), Q=st.integers(0, 1), steps=st.integers(1, 30))
def test_absorption(T, Q, steps):
    t, q = T, Q
    for k in range(steps):
        t, q = tq_update(t, q, T)
        assert t == T
        assert q == 0


def test_window_shift_example():
    state, out = update_state(msg((1, 0, 0)), 0, SystemParams(K=5))
    assert out.signals == (0, 0, 0)
    assert state.signal_window == (1, 0, 0, 0)
    assert state.x == 1
    assert state.learned_mark


@given(K=st.integers(2, 12), data=st.data())
def test_window_discipline(K, data):
    window = tuple(data.draw(st.lists(st.integers(0, 1), min_size=K - 2, max_size=K - 2)))
    own = data.draw(st.integers(0, 1))
    T = data.draw(st.integers(0, 1))
    Q = data.draw(st.integers(0, 1))
    state, out = update_state(msg(window, T, Q), own, SystemParams(K=K))
    assert out.signals == (window + (own,))[1:]
    assert len(out.signals) == K - 2
    assert out.payload_bits == K
    assert state.kappa + state.eta == K - 1
    assert (out.T, out.Q) == tq_update(T, Q, state.x)


def test_update_rejects_bad_window():
    with pytest.raises(ValueError):
        update_state(msg((1, 0)), 0, SystemParams(K=5))


def test_root_message_is_zero_padded():
    state, out = root_message(1, True, 5, 9)
    assert state.signal_window == (0, 0, 0, 1)
    assert (state.x, state.T, state.Q) == (1, 1, 0)
    assert out.signals == (0, 0, 1)
    assert out.sequence_id == 9
    assert (state.kappa, state.eta) == (1, 3)


def test_kappa_drops_one_per_hop_leaving_the_disk():
    p = SystemParams(K=5)
    incoming = msg((1, 1, 1), 1, 0, (True, True, True))
    state, out = update_state(incoming, 1, p, own_inside=True)
    kappas = [state.kappa]
    for _ in range(6):
        state, out = update_state(out, 0, p, own_inside=False)
        kappas.append(state.kappa)
    assert kappas == [4, 3, 2, 1, 0, 0, 0]


@pytest.mark.parametrize("history, own, known, want", [
    ([], 1, False, 1),
    ([0, 0, 0, 0], 0, False, 0),
    ([1, 0, 0], 0, True, 1),
])
def test_infinite_memory_examples(history, own, known, want):
    assert infinite_memory_update(history, own, SystemParams(), known) == want


# seeding

def test_single_in_range_node_is_the_only_root():
    topo = make_topology([[0, 0], [1, 0], [2, 0]], [False, True, False])
    st_ = seed_sequences(topo, SystemParams(p11=1.0, p10=0.0, K=4), np.random.default_rng(0))
    assert st_.n_roots == 1
    assert st_.membership.tolist() == [-1, 1, -1]
    assert (st_.x[1], st_.T[1], st_.Q[1]) == (1, 1, 0)


def test_no_signal_no_sequences():
    topo = make_topology([[0, 0], [1, 0]], [True, True])
    p = SimpleNamespace(p11=0.0, p10=0.0, K=4)
    st_ = seed_sequences(topo, p, np.random.default_rng(0))
    assert st_.n_roots == 0
    assert st_.done
    assert (st_.membership == -1).all()


def test_root_count_is_binomial():
    topo = make_topology(np.random.default_rng(0).uniform(-5, 5, (20, 2)), [True] * 20)
    p = SystemParams(p11=0.8, p10=0.0)
    rng = np.random.default_rng(42)
    counts = [seed_sequences(topo, p, rng).n_roots for _ in range(10_000)]
    assert np.mean(counts) == pytest.approx(16, abs=0.5)


# propagation

def test_line_graph_timing():
    topo = make_topology([[0, 0], [1.5, 0], [3, 0]], [True, False, False])
    st_ = run_propagation(topo, SystemParams(p11=1.0, p10=0.0, K=4), np.random.default_rng(0))
    assert st_.learned_slot.tolist() == [0, 1, 2]
    assert st_.membership.tolist() == [0, 0, 0]
    assert st_.parent.tolist() == [-2, 0, 1]


def test_tie_break_is_fair():
    # roots 0 and 2 both reach node 1 in the same step
    topo = make_topology([[0, 0], [1.5, 0], [3, 0]], [True, False, True])
    p = SystemParams(p11=1.0, p10=0.0, K=4)
    rng = np.random.default_rng(7)
    picks = []
    for _ in range(10_000):
        st_ = seed_sequences(topo, p, rng)
        propagate_step(topo, st_, p, rng)
        picks.append(st_.membership[1] == 0)
    assert np.mean(picks) == pytest.approx(0.5, abs=0.02)


def test_assigned_node_ignores_late_message():
    topo = make_topology([[0, 0], [1.5, 0], [3, 0]], [True, False, False])
    p = SystemParams(p11=1.0, p10=0.0, K=4)
    rng = np.random.default_rng(0)
    st_ = seed_sequences(topo, p, rng)
    propagate_step(topo, st_, p, rng)
    before = st_.membership.copy(), st_.T.copy(), st_.learned_slot.copy()
    st_.frontier = {1: [(2, LearningMessage((1, 1), 0, 1, 2))], **st_.frontier}
    propagate_step(topo, st_, p, rng)
    assert st_.membership[1] == before[0][1]
    assert st_.T[1] == before[1][1]
    assert st_.learned_slot[1] == before[2][1]


@pytest.mark.parametrize("seed", range(4))
def test_membership_is_permanent_and_counters_consistent(seed):
    p = SystemParams(lam=0.4, K=6)
    topo = sample_deployment(p, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 100)
    st_ = seed_sequences(topo, p, rng)
    prev = st_.membership.copy()
    while not st_.done:
        propagate_step(topo, st_, p, rng)
        fixed = prev >= 0
        assert np.array_equal(st_.membership[fixed], prev[fixed])
        prev = st_.membership.copy()
    learned = st_.membership >= 0
    assert np.all(st_.kappa[learned] + st_.eta[learned] == p.K - 1)
    # an outside child keeps its parent's kappa or loses exactly one
    for node in np.nonzero(learned & (st_.parent >= 0) & ~topo.inside)[0]:
        parent = st_.parent[node]
        assert st_.kappa[node] in (st_.kappa[parent], st_.kappa[parent] - 1)
        assert st_.membership[node] == st_.membership[parent]


def test_infinite_memory_follows_or_rule():
    p = SystemParams(lam=0.3, K=3, p10=0.0)
    topo = sample_deployment(p, np.random.default_rng(4))
    st_ = run_propagation(topo, p, np.random.default_rng(5), memory="infinite")
    learned = st_.membership >= 0
    # every chain starts at a root holding a 1, so the OR over the full history is 1
    assert np.all(st_.x[learned] == 1)
    assert np.all(st_.T[learned] == 1)


def test_containment_small():
    result = harness.check_containment(n_topologies=5, K_values=range(2, 6))
    assert result.passed, result.counterexample


def test_trace_rows():
    topo = make_topology([[0, 0], [1.5, 0]], [True, False])
    st_ = run_propagation(topo, SystemParams(p11=1.0, p10=0.0, K=3), np.random.default_rng(0), trace=True)
    text = format_trace(st_.trace)
    assert text.splitlines() == ["slot\tnode\tsequence_id\tx\tT\tQ", "0\t0\t0\t1\t1\t0", "1\t1\t0\t1\t1\t0"]
