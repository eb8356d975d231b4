"""Private signals, private beliefs and hop-by-hop sequential learning.

A finite-memory message carries ``K`` bits: the ``K-2`` most recent private
signals of the chain (oldest first) plus the tracking bits ``T`` (current
estimate of the alarm state) and ``Q`` (a pending challenge to ``T``).

T/Q automaton, applied after a node computes its belief ``x``::

    Q=0, x == T  ->  (T, 0)
    Q=0, x != T  ->  (T, 1)      challenge raised
    Q=1, x != T  ->  (not T, 0)  second disagreement in a row flips T
    Q=1, x == T  ->  (T, 0)      challenge withdrawn
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .params import SystemParams
from .topology import Topology

BeliefRule = Literal["unknown", "known"]
Memory = Literal["finite", "infinite"]


def draw_private_signal(inside: bool, params: SystemParams, rng: np.random.Generator) -> int:
    p = params.p11 if inside else params.p10
    return int(rng.random() < p)


def draw_private_signals(
    inside: np.ndarray, params: SystemParams, rng: np.random.Generator, theta: int = 1
) -> np.ndarray:
    """One signal per node; under ``theta=0`` nobody is near a real abnormality."""
    p = np.where(inside, params.p11, params.p10) if theta == 1 else np.full(len(inside), params.p10)
    return (rng.random(len(inside)) < p).astype(np.int8)


def _log_likelihoods(signals: Sequence[int], p11: float, p10: float) -> tuple[float, float]:
    if not (0.0 < p10 < 1.0 and 0.0 < p11 < 1.0):
        raise ValueError("the likelihood-ratio belief needs p11, p10 strictly inside (0, 1)")
    ones = sum(signals)
    zeros = len(signals) - ones
    ll1 = ones * math.log(p11) + zeros * math.log(1.0 - p11)
    ll0 = ones * math.log(p10) + zeros * math.log(1.0 - p10)
    return ll1, ll0


def private_belief_known(signals: Sequence[int], p11: float, p10: float) -> int:
    """Maximum-likelihood belief when the signal probabilities are known.

    Returns 1 iff ``ll1 / ll0 <= 1`` where both are (negative) summed
    log-likelihoods, i.e. iff the alarm hypothesis is at least as likely.
    """
    if len(signals) == 0:
        raise ValueError("need at least one signal")
    ll1, ll0 = _log_likelihoods(signals, p11, p10)
    # both logs are negative, so the ratio test is ll1 >= ll0
    return int(ll1 / ll0 <= 1.0)


def private_belief_unknown(signals: Sequence[int]) -> int:
    """OR rule: believe in the alarm if any signal is 1."""
    if len(signals) == 0:
        raise ValueError("need at least one signal")
    return int(any(signals))


def private_belief(signals: Sequence[int], params: SystemParams, rule: BeliefRule) -> int:
    if rule == "unknown":
        return private_belief_unknown(signals)
    if rule == "known":
        return private_belief_known(signals, params.p11, params.p10)
    raise ValueError(f"unknown belief rule {rule!r}")


def tq_update(T: int, Q: int, x: int) -> tuple[int, int]:
    """Two-bit hysteresis: T only flips after two consecutive disagreements."""
    if x == T:
        return T, 0
    if Q == 0:
        return T, 1
    return 1 - T, 0


@dataclass(frozen=True)
class LearningMessage:
    """K bits on the air (``signals`` + ``T`` + ``Q``) plus simulator metadata.

    ``provenance[j]`` says whether ``signals[j]`` came from a node inside
    the observation disk; padding counts as outside. It is never
    transmitted.
    """

    signals: tuple[int, ...]
    T: int
    Q: int
    sequence_id: int
    provenance: tuple[bool, ...] = ()

    @property
    def payload_bits(self) -> int:
        return len(self.signals) + 2


@dataclass(frozen=True)
class BeliefState:
    signal_window: tuple[int, ...]
    provenance: tuple[bool, ...]
    x: int
    T: int
    Q: int
    learned_mark: bool = True

    @property
    def kappa(self) -> int:
        return sum(self.provenance)

    @property
    def eta(self) -> int:
        return len(self.provenance) - self.kappa


def root_message(own_signal: int, own_inside: bool, K: int, sequence_id: int) -> tuple[BeliefState, LearningMessage]:
    """State of a node that starts a sequence: zero-padded window, ``T = x``."""
    pad = K - 2
    window = (0,) * pad
    prov = (False,) * pad
    x = int(own_signal)
    state = BeliefState(window + (x,), prov + (own_inside,), x, x, 0)
    return state, LearningMessage(state.signal_window[1:], x, 0, sequence_id, state.provenance[1:])


def update_state(
    incoming: LearningMessage,
    own_signal: int,
    params: SystemParams,
    belief_rule: BeliefRule = "unknown",
    own_inside: bool = False,
) -> tuple[BeliefState, LearningMessage]:
    """One learning step of a finite-memory node.

    The belief is computed over the ``K-1`` signals formed by the incoming
    window and the node's own signal; the outgoing window drops the oldest
    incoming signal and appends the own one.

    Raises:
        ValueError: if the incoming window is not ``K-2`` bits long.
    """
    pad = params.K - 2
    if len(incoming.signals) != pad:
        raise ValueError(f"incoming window has {len(incoming.signals)} signals, expected K-2={pad}")
    seen = incoming.signals + (own_signal,)
    prov_in = incoming.provenance or (False,) * pad
    seen_prov = prov_in + (own_inside,)
    x = private_belief(seen, params, belief_rule)
    T, Q = tq_update(incoming.T, incoming.Q, x)
    state = BeliefState(seen, seen_prov, x, T, Q)
    return state, LearningMessage(seen[1:], T, Q, incoming.sequence_id, seen_prov[1:])


def infinite_memory_update(
    history: Sequence[int], own_signal: int, params: SystemParams, known_probs: bool = False
) -> int:
    """Belief over the whole chain history plus the node's own signal."""
    full = list(history) + [own_signal]
    if known_probs:
        return private_belief_known(full, params.p11, params.p10)
    return private_belief_unknown(full)


@dataclass
class SequenceState:
    """Mutable propagation state for one episode.

    ``membership[i]`` is the sequence id node ``i`` joined, or -1.
    ``frontier`` maps a node to the ``(sender, message)`` pairs that reached
    it this slot.
    """

    K: int
    memory: Memory
    belief_rule: BeliefRule
    signals: np.ndarray
    inside: np.ndarray
    membership: np.ndarray
    x: np.ndarray
    T: np.ndarray
    Q: np.ndarray
    kappa: np.ndarray
    eta: np.ndarray
    learned_slot: np.ndarray
    parent: np.ndarray
    frontier: dict[int, list[tuple[int, LearningMessage]]] = field(default_factory=dict)
    step: int = 0
    trace: list[tuple[int, int, int, int, int, int]] | None = None

    @property
    def n_roots(self) -> int:
        return int((self.parent == -2).sum())

    @property
    def done(self) -> bool:
        return not self.frontier


def _new_state(n: int, K: int, memory: Memory, rule: BeliefRule, signals, inside, trace: bool) -> SequenceState:
    minus = lambda: np.full(n, -1, dtype=np.int64)  # noqa: E731
    return SequenceState(
        K=K, memory=memory, belief_rule=rule, signals=signals, inside=np.asarray(inside, dtype=bool),
        membership=minus(), x=minus(), T=np.zeros(n, dtype=np.int8), Q=np.zeros(n, dtype=np.int8),
        kappa=minus(), eta=minus(), learned_slot=minus(), parent=minus(),
        trace=[] if trace else None,
    )


def seed_sequences(
    topology: Topology,
    params: SystemParams,
    rng: np.random.Generator,
    theta: int = 1,
    memory: Memory = "finite",
    belief_rule: BeliefRule = "unknown",
    trace: bool = False,
) -> SequenceState:
    """Draw every node's private signal at onset and start a sequence at each 1.

    Each root's id is its node id. Roots message all their neighbors for the
    next step. Nodes that drew 0 keep that signal for their later learning
    step.
    """
    n = topology.n
    signals = draw_private_signals(topology.inside, params, rng, theta)
    st = _new_state(n, params.K, memory, belief_rule, signals, topology.inside, trace)
    roots = np.nonzero(signals)[0].tolist()
    outgoing: dict[int, LearningMessage] = {}
    for r in roots:
        inside_r = bool(topology.inside[r])
        if memory == "finite":
            bs, msg = root_message(1, inside_r, params.K, r)
            _commit(st, r, bs.x, bs.T, bs.Q, bs.kappa, bs.eta, -2)
        else:
            msg = LearningMessage((1,), 1, 0, r, (inside_r,))
            _commit(st, r, 1, 1, 0, int(inside_r), 0, -2)
        outgoing[r] = msg
        st.membership[r] = r
    _deliver(st, topology, outgoing)
    if st.trace is not None:
        for r in roots:
            st.trace.append((0, r, r, int(st.x[r]), int(st.T[r]), int(st.Q[r])))
    return st


def _commit(st: SequenceState, node: int, x: int, T: int, Q: int, kappa: int, eta: int, parent: int) -> None:
    st.x[node] = x
    st.T[node] = T
    st.Q[node] = Q
    st.kappa[node] = kappa
    st.eta[node] = eta
    st.parent[node] = parent
    st.learned_slot[node] = st.step


def _deliver(st: SequenceState, topology: Topology, outgoing: dict[int, LearningMessage]) -> None:
    frontier: dict[int, list[tuple[int, LearningMessage]]] = {}
    membership = st.membership
    for src in sorted(outgoing):
        msg = outgoing[src]
        for nb in topology.adjacency[src]:
            if membership[nb] < 0:
                frontier.setdefault(nb, []).append((src, msg))
    st.frontier = frontier


def propagate_step(
    topology: Topology, state: SequenceState, params: SystemParams, rng: np.random.Generator
) -> SequenceState:
    """Advance every sequence by one hop.

    Each unassigned node holding pending messages picks one uniformly at
    random (draws taken in node-id order), runs its learning step, joins that
    sequence for good and messages its still-unassigned neighbors.
    """
    st = state
    st.step += 1
    pending = st.frontier
    outgoing: dict[int, LearningMessage] = {}
    known = st.belief_rule == "known"
    for node in sorted(pending):
        if st.membership[node] >= 0:
            continue
        arrivals = pending[node]
        pick = int(rng.integers(len(arrivals))) if len(arrivals) > 1 else 0
        src, msg = arrivals[pick]
        own = int(st.signals[node])
        own_inside = bool(st.inside[node])
        if st.memory == "finite":
            bs, out = update_state(msg, own, params, st.belief_rule, own_inside)
            x, T, Q, kappa, eta = bs.x, bs.T, bs.Q, bs.kappa, bs.eta
        else:
            x = infinite_memory_update(msg.signals, own, params, known)
            T, Q = x, 0
            prov = msg.provenance + (own_inside,)
            kappa = sum(prov)
            eta = len(prov) - kappa
            out = LearningMessage(msg.signals + (own,), T, Q, msg.sequence_id, prov)
        _commit(st, node, x, T, Q, kappa, eta, src)
        outgoing[node] = out
    for node, out in outgoing.items():
        st.membership[node] = out.sequence_id
        if st.trace is not None:
            st.trace.append((st.step, node, out.sequence_id, int(st.x[node]), int(st.T[node]), int(st.Q[node])))
    _deliver(st, topology, outgoing)
    return st


def run_propagation(
    topology: Topology,
    params: SystemParams,
    rng: np.random.Generator,
    theta: int = 1,
    memory: Memory = "finite",
    belief_rule: BeliefRule = "unknown",
    trace: bool = False,
    max_steps: int | None = None,
) -> SequenceState:
    """Seed and propagate until no messages are pending."""
    st = seed_sequences(topology, params, rng, theta, memory, belief_rule, trace)
    limit = max_steps if max_steps is not None else topology.n + 1
    while not st.done and st.step < limit:
        propagate_step(topology, st, params, rng)
    return st


def format_trace(rows: list[tuple[int, int, int, int, int, int]]) -> str:
    lines = ["slot\tnode\tsequence_id\tx\tT\tQ"]
    lines += ["\t".join(map(str, r)) for r in rows]
    return "\n".join(lines) + "\n"
