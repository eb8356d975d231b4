"""Closed-form throughput, delay and belief-quality formulas.

Throughput follows a per-subset inclusion-exclusion: ``prob_success_exact(s)``
is the probability that one *particular* set of ``s`` active devices are the
only successes in a slot, so the distribution of the success count ``S`` is
``binom(n, s) * prob_success_exact(s, n, C)``.

``brute_force_throughput`` is an independent enumeration oracle for the
combinatorial formulas and shares no code with them.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .params import SystemParams

ENUMERATION_LIMIT = 10**6


def _check_counts(n: int, C: int) -> None:
    if n < 0:
        raise ValueError(f"active count n must be >= 0, got {n}")
    if C < 1:
        raise ValueError(f"code count C must be >= 1, got {C}")


def s_max(n: int, C: int) -> int:
    """Largest number of simultaneous successes with ``n`` actives and ``C`` codes."""
    _check_counts(n, C)
    return n if n <= C else C - 1


def prob_success_at_least(s: int, n: int, C: int) -> float:
    """Probability that a given set of ``s`` actives all hold unique codes.

    The ``s`` devices pick distinct codes and the remaining ``n - s`` avoid
    all of them. ``s == 0`` is the empty product.
    """
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    _check_counts(n, C)
    if s == 0:
        return 1.0
    if s > n:
        return 0.0
    distinct = 1.0
    for j in range(s):
        distinct *= (C - j) / C
    if s < C:
        return distinct * ((C - s) / C) ** (n - s)
    if s == C == n:
        return distinct
    return 0.0


@lru_cache(maxsize=4096)
def _exact_table(n: int, C: int) -> tuple[float, ...]:
    # top-down: the largest s has no larger terms to subtract
    top = s_max(n, C)
    q = [0.0] * (top + 1)
    for s in range(top, -1, -1):
        acc = prob_success_at_least(s, n, C)
        for i in range(1, top - s + 1):
            acc -= comb(n - s, i) * q[s + i]
        q[s] = acc
    return tuple(q)


def prob_success_exact(s: int, n: int, C: int) -> float:
    """Probability that exactly a given set of ``s`` actives succeed.

    Raises:
        ValueError: if ``s`` exceeds :func:`s_max`.
    """
    _check_counts(n, C)
    top = s_max(n, C)
    if not 0 <= s <= top:
        raise ValueError(f"s={s} outside 0..s_max={top} for n={n}, C={C}")
    # clamp rounding residue; true values are nonnegative
    return min(max(_exact_table(n, C)[s], 0.0), 1.0)


@dataclass(frozen=True)
class ThroughputDistribution:
    n: int
    C: int
    s_max: int
    p_exact: dict[int, float]

    @classmethod
    def build(cls, n: int, C: int) -> "ThroughputDistribution":
        top = s_max(n, C)
        return cls(n, C, top, {s: prob_success_exact(s, n, C) for s in range(top + 1)})

    def pmf(self) -> np.ndarray:
        """Distribution of the success count, ``binom(n, s) * p_exact[s]``."""
        return np.array([comb(self.n, s) * p for s, p in sorted(self.p_exact.items())])

    def total_mass(self) -> float:
        return float(sum(comb(self.n, s) * p for s, p in self.p_exact.items()))


def expected_throughput(n: int, C: int) -> float:
    """Mean number of successful transmissions in a slot."""
    _check_counts(n, C)
    if n == 0:
        return 0.0
    q = _exact_table(n, C)
    return sum(s * comb(n, s) * q[s] for s in range(1, len(q)))


def brute_force_throughput(n: int, C: int) -> Fraction:
    """Exact mean success count by enumerating all ``C**n`` code assignments.

    A device succeeds iff no other device picked its code. Returns an exact
    rational.

    Raises:
        ValueError: if ``C**n`` exceeds :data:`ENUMERATION_LIMIT`.
    """
    _check_counts(n, C)
    total = C**n
    if total > ENUMERATION_LIMIT:
        raise ValueError(f"C**n = {total} exceeds the enumeration bound {ENUMERATION_LIMIT}")
    if n == 0:
        return Fraction(0)
    # row r of `codes` is assignment r written in base C
    idx = np.arange(total, dtype=np.int64)
    codes = np.empty((total, n), dtype=np.int64)
    for k in range(n):
        codes[:, k] = idx % C
        idx //= C
    successes = 0
    for k in range(n):
        unique = np.ones(total, dtype=bool)
        for j in range(n):
            if j != k:
                unique &= codes[:, k] != codes[:, j]
        successes += int(unique.sum())
    return Fraction(successes, total)


def alarm_success_prob(params: SystemParams) -> float:
    """Per-slot alarm success probability against ``(N-1)/T`` expected competitors."""
    _check_delay_params(params)
    C = params.C
    return ((C - 1) / C) ** ((params.N - 1) / params.T)


def expected_delay_no_learning(params: SystemParams) -> float:
    """Mean alarm delay in slots without learning (geometric, mean 1/p_s).

    Multiply by ``params.tau`` for seconds. Returns ``inf`` past float range.
    """
    _check_delay_params(params)
    C = params.C
    try:
        return (C / (C - 1)) ** ((params.N - 1) / params.T)
    except OverflowError:
        return float("inf")


def _check_delay_params(params: SystemParams) -> None:
    if params.N < 1:
        raise ValueError("need at least the alarm holder (N >= 1)")
    if params.C < 2:
        raise ValueError("need C >= 2 codes for a reserved alarm code")


def effective_observation_range(r_d: float, r_c: float, K: int) -> float:
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if r_d <= 0 or r_c <= 0:
        raise ValueError("ranges must be positive")
    return r_d + (K - 2) * r_c


def belief_correct_prob_inside(p11: float, K: int) -> float:
    """P(belief = 1 | alarm) for a device whose K-1 signals all come from inside."""
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if not 0.0 <= p11 <= 1.0:
        raise ValueError(f"p11 must be a probability, got {p11}")
    return 1.0 - (1.0 - p11) ** (K - 1)


def belief_correct_prob_outside(
    p11: float, kappa: int, eta: int = 0, p10: float | None = None
) -> float:
    """P(belief = 1 | alarm) with ``kappa`` inside and ``eta`` outside signals.

    With ``p10=None`` outside signals are treated as carrying no evidence
    (the simplified form); otherwise the full form is used.
    """
    if kappa < 0 or eta < 0:
        raise ValueError("kappa and eta must be non-negative")
    miss = (1.0 - p11) ** kappa
    if p10 is not None:
        miss *= (1.0 - p10) ** eta
    return 1.0 - miss
