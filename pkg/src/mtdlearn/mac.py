"""Slotted CDMA uplink with periodic traffic, one alarm and learned code avoidance.

Code 0 is the reserved alarm code. The alarm holder transmits on it every
slot from onset until the episode ends; nodes whose tracking bit ``T`` is 1
pick their periodic code from the other ``C-1`` codes.

Every episode draws its randomness from five independent child streams of
one seed (topology, phases, signals, tie-breaks, codes), so runs that share
a seed but differ in mode or ``K`` see the same deployment, traffic and
signals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import learning
from .params import SystemParams
from .topology import Topology, sample_deployment

Mode = Literal["no_learning", "finite_memory", "infinite_memory"]
PhaseMode = Literal["balanced", "independent"]
MODES: tuple[str, ...] = ("no_learning", "finite_memory", "infinite_memory")
RESERVED_CODE = 0
DEFAULT_EPISODE_CAP = 10**6


class EpisodeTruncated(RuntimeError):
    """The episode hit its slot cap; ``metrics`` holds the partial result."""

    def __init__(self, metrics: "EpisodeMetrics", cap: int):
        super().__init__(f"episode exceeded {cap} slots after onset")
        self.metrics = metrics
        self.cap = cap


@dataclass
class TrafficState:
    phase: np.ndarray
    alarm_holder: int | None
    alarm_onset: int
    reserved_code: int = RESERVED_CODE
    by_phase: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.by_phase:
            T = int(self.phase.max()) if len(self.phase) else 1
            self.by_phase = [np.nonzero(self.phase == p)[0] for p in range(T + 1)]

    def periodic_active(self, slot: int, T: int) -> np.ndarray:
        """Node ids whose periodic message is due in ``slot`` (1-based)."""
        p = (slot - 1) % T + 1
        if p >= len(self.by_phase):
            return np.empty(0, dtype=np.int64)
        return self.by_phase[p]


@dataclass
class SlotOutcome:
    """One slot. ``active``/``codes``/``success`` are aligned arrays.

    The alarm holder, when transmitting, is the last entry.
    """

    slot: int
    active: np.ndarray
    codes: np.ndarray
    success: np.ndarray
    alarm_active: bool
    alarm_success: bool
    learned_active: np.ndarray | None = None

    @property
    def successes(self) -> set[int]:
        return set(self.active[self.success].tolist())

    @property
    def code_choice(self) -> dict[int, int]:
        return dict(zip(self.active.tolist(), self.codes.tolist()))

    @property
    def n_periodic_success(self) -> int:
        return int(self.success.sum()) - int(self.alarm_success)


@dataclass
class EpisodeMetrics:
    n_nodes: int
    alarm_delay: int
    throughput_series: list[int]
    learned_fraction_series: list[float]
    learned_fraction_final: float
    throughput_baseline: float
    throughput_post_onset: float
    zero_observer: bool
    learned_fraction_at_success: float
    truncated: bool = False
    slot_trace: list[tuple[int, int, int, int, int]] | None = None
    learning_trace: list[tuple[int, int, int, int, int, int]] | None = None
    slots: list[SlotOutcome] | None = None


def schedule_phases(
    topology: Topology,
    params: SystemParams,
    rng: np.random.Generator,
    alarm_holder: int | None = None,
    onset_slot: int | None = None,
    phases: PhaseMode = "balanced",
) -> TrafficState:
    """Assign each node a first-transmission slot in ``1..T``.

    Every node's phase is marginally uniform on ``1..T`` in both modes.
    ``"independent"`` draws phases i.i.d., so per-slot load is binomial.
    ``"balanced"`` deals a random permutation of the non-holder nodes
    round-robin from a random offset, so each slot carries
    ``floor((N-1)/T)`` or ``ceil((N-1)/T)`` of them.
    """
    T = params.T
    n = topology.n
    if phases == "independent":
        phase = rng.integers(1, T + 1, size=n)
    elif phases == "balanced":
        phase = np.empty(n, dtype=np.int64)
        others = np.arange(n) if alarm_holder is None else np.delete(np.arange(n), alarm_holder)
        offset = int(rng.integers(T))
        perm = rng.permutation(others)
        phase[perm] = (np.arange(len(perm)) + offset) % T + 1
        if alarm_holder is not None:
            phase[alarm_holder] = int(rng.integers(1, T + 1))
    else:
        raise ValueError(f"unknown phase assignment {phases!r}")
    by_phase = [np.nonzero(phase == p)[0] for p in range(T + 1)]
    onset = T + 1 if onset_slot is None else onset_slot
    return TrafficState(phase, alarm_holder, onset, RESERVED_CODE, by_phase)


def choose_alarm_holder(topology: Topology) -> int:
    """Node nearest the abnormality (inside the disk whenever anyone is)."""
    if topology.n == 0:
        raise ValueError("cannot place an alarm in an empty deployment")
    return int(np.argmin(topology.distance_to_abnormality()))


def pick_codes(uniforms: np.ndarray, learned: np.ndarray, C: int) -> np.ndarray:
    """Map uniforms to codes: ``0..C-1`` normally, ``1..C-1`` once learned."""
    plain = np.minimum((uniforms * C).astype(np.int64), C - 1)
    avoid = 1 + np.minimum((uniforms * (C - 1)).astype(np.int64), C - 2)
    return np.where(learned, avoid, plain)


def resolve_codes(codes: np.ndarray, C: int) -> np.ndarray:
    """Success mask: a transmission succeeds iff nobody else used its code."""
    counts = np.bincount(codes, minlength=C)
    return counts[codes] == 1


def simulate_slot(
    traffic: TrafficState,
    learned: np.ndarray,
    params: SystemParams,
    rng: np.random.Generator,
    slot: int,
) -> SlotOutcome:
    """Resolve one slot.

    Failed periodic messages are dropped, never retried. The alarm holder
    sends only the alarm from onset on.
    """
    C = params.C
    periodic = traffic.periodic_active(slot, params.T)
    holder = traffic.alarm_holder
    alarm_on = holder is not None and slot >= traffic.alarm_onset
    if alarm_on:
        periodic = periodic[periodic != holder]
    flags = learned[periodic]
    codes = pick_codes(rng.random(len(periodic)), flags, C)
    if alarm_on:
        active = np.append(periodic, holder)
        codes = np.append(codes, traffic.reserved_code)
        flags = np.append(flags, False)
    else:
        active = periodic
    success = resolve_codes(codes, C) if len(codes) else np.zeros(0, dtype=bool)
    alarm_success = bool(alarm_on and success[-1])
    return SlotOutcome(slot, active, codes, success, alarm_on, alarm_success, flags)


def episode_streams(seed) -> dict[str, np.random.Generator]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    names = ("topology", "phase", "signal", "tiebreak", "code")
    return {name: np.random.Generator(np.random.PCG64(child)) for name, child in zip(names, ss.spawn(len(names)))}


def run_episode(
    params: SystemParams,
    mode: Mode,
    seed,
    *,
    fixed_n: int | None = None,
    abnormality_pos: tuple[float, float] | None = None,
    onset_slot: int | None = None,
    episode_cap: int = DEFAULT_EPISODE_CAP,
    belief_rule: learning.BeliefRule = "unknown",
    trace: bool = False,
    topology: Topology | None = None,
    phases: PhaseMode = "balanced",
    record_slots: bool = False,
) -> EpisodeMetrics:
    """Simulate one alarm episode.

    Slots ``1..onset-1`` carry periodic traffic only and give the baseline
    throughput. From ``onset`` on, each slot first advances learning by one
    hop (roots are seeded in the onset slot itself), then resolves the MAC
    using the current ``T`` bits. The episode ends once the alarm has
    succeeded and no learning messages are pending.

    Raises:
        EpisodeTruncated: if more than ``episode_cap`` slots elapse after onset.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    rngs = episode_streams(seed)
    topo = topology if topology is not None else sample_deployment(
        params, rngs["topology"], fixed_n=fixed_n, abnormality_pos=abnormality_pos
    )
    holder = choose_alarm_holder(topo)
    traffic = schedule_phases(topo, params, rngs["phase"], holder, onset_slot, phases)
    onset = traffic.alarm_onset
    if onset < 1:
        raise ValueError("onset slot must be >= 1")
    n = topo.n
    learned = np.zeros(n, dtype=bool)
    series: list[int] = []
    fractions: list[float] = []
    slot_trace = [] if trace else None
    slots: list[SlotOutcome] | None = [] if record_slots else None

    base_successes = 0
    for t in range(1, onset):
        out = simulate_slot(traffic, learned, params, rngs["code"], t)
        if slots is not None:
            slots.append(out)
        base_successes += out.n_periodic_success
        series.append(out.n_periodic_success)
        fractions.append(0.0)
        if slot_trace is not None:
            slot_trace.append((t, len(out.active), int(out.success.sum()), 0, 0))

    if mode == "no_learning":
        signals = learning.draw_private_signals(topo.inside, params, rngs["signal"])
        zero_observer = not signals.any()
        seq = None
    else:
        memory = "finite" if mode == "finite_memory" else "infinite"
        seq = learning.seed_sequences(topo, params, rngs["signal"], 1, memory, belief_rule, trace)
        zero_observer = seq.n_roots == 0

    delay = 0
    at_success = 0.0
    post_successes = 0
    t = onset
    truncated = False
    while True:
        if seq is not None:
            if t > onset and not seq.done:
                learning.propagate_step(topo, seq, params, rngs["tiebreak"])
            learned = seq.T == 1
        out = simulate_slot(traffic, learned, params, rngs["code"], t)
        frac = float(learned.mean()) if n else 0.0
        if slots is not None:
            slots.append(out)
        post_successes += out.n_periodic_success
        series.append(out.n_periodic_success)
        fractions.append(frac)
        if slot_trace is not None:
            slot_trace.append((t, len(out.active), int(out.success.sum()), int(out.alarm_active), int(out.alarm_success)))
        if out.alarm_success and not delay:
            delay = t - onset + 1
            at_success = frac
        if delay and (seq is None or seq.done):
            break
        if t - onset + 1 >= episode_cap:
            truncated = True
            break
        t += 1

    post_slots = t - onset + 1
    metrics = EpisodeMetrics(
        n_nodes=n,
        alarm_delay=delay if delay else post_slots,
        throughput_series=series,
        learned_fraction_series=fractions,
        learned_fraction_final=fractions[-1],
        throughput_baseline=base_successes / (onset - 1) if onset > 1 else float("nan"),
        throughput_post_onset=post_successes / post_slots,
        zero_observer=bool(zero_observer),
        learned_fraction_at_success=at_success,
        truncated=truncated,
        slot_trace=slot_trace,
        learning_trace=seq.trace if seq is not None else None,
        slots=slots,
    )
    if truncated:
        raise EpisodeTruncated(metrics, episode_cap)
    return metrics


def format_slot_trace(rows: list[tuple[int, int, int, int, int]]) -> str:
    lines = ["slot\tn_active\tn_success\talarm_active\talarm_success"]
    lines += ["\t".join(map(str, r)) for r in rows]
    return "\n".join(lines) + "\n"
