"""Seeded Monte Carlo sweeps over (K, density), CSV output and self-checks."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import analytics, learning
from .mac import DEFAULT_EPISODE_CAP, MODES, EpisodeTruncated, run_episode
from .params import SystemParams
from .topology import sample_deployment

log = logging.getLogger(__name__)

RAW_HEADER = (
    "lambda", "K", "mode", "replication", "seed", "N_actual", "alarm_delay_slots",
    "throughput_post", "throughput_base", "learned_fraction", "truncated", "zero_observer",
)
AGGREGATE_HEADER = (
    "lambda", "K", "mode", "reps", "delay_mean", "delay_ci95", "delay_reduction_pct",
    "throughput_reduction_pct", "learned_pct", "learned_ci95",
)
BREAKDOWN_HEADER = (
    "lambda", "K", "mode", "reps", "first_slot_successes", "delay_mean_after_first_slot",
    "learned_pct_at_success", "zero_observer_reps",
)

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(master: int, *indices: int) -> int:
    """Fold indices into a 64-bit seed: ``h = splitmix64(h ^ splitmix64(i))``."""
    h = _splitmix64(master & _MASK64)
    for i in indices:
        h = _splitmix64(h ^ _splitmix64(i & _MASK64))
    return h


def percent_reduction(value: float, baseline: float) -> float:
    """``100 * (baseline - value) / baseline``.

    Raises:
        ValueError: on a non-positive baseline.
    """
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return float(100.0 * (baseline - value) / baseline)


@dataclass
class ExperimentSpec:
    params: SystemParams = field(default_factory=SystemParams)
    K_grid: list[int] = field(default_factory=lambda: list(range(2, 16)))
    lambda_grid: list[float] = field(default_factory=lambda: [0.5, 0.8])
    modes: list[str] = field(default_factory=lambda: ["no_learning", "finite_memory"])
    replications: int = 500
    master_seed: int = 20170501
    output_dir: str | None = None
    fixed_n: int | None = None
    abnormality_pos: tuple[float, float] | None = None
    onset_slot: int | None = None
    episode_cap: int = DEFAULT_EPISODE_CAP
    belief_rule: str = "unknown"
    phases: str = "balanced"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.lambda_grid:
            raise ValueError("lambda grid is empty")
        if not self.modes:
            raise ValueError("mode list is empty")
        if any(m not in MODES for m in self.modes):
            raise ValueError(f"modes must be drawn from {MODES}")
        learners = [m for m in self.modes if m != "no_learning"]
        if learners and not self.K_grid:
            raise ValueError("K grid is empty")
        if any(k < 2 for k in self.K_grid):
            raise ValueError("every K must be >= 2")


@dataclass(frozen=True)
class ResultRow:
    lam: float
    K: int | None
    mode: str
    replication: int
    seed: int
    N_actual: int
    alarm_delay_slots: int
    throughput_post_onset: float
    throughput_baseline: float
    learned_fraction_final: float
    truncated: bool
    zero_observer: bool
    learned_fraction_at_success: float = 0.0

    def csv_fields(self) -> list:
        return [
            repr(self.lam), "" if self.K is None else self.K, self.mode, self.replication, self.seed,
            self.N_actual, self.alarm_delay_slots, repr(self.throughput_post_onset),
            repr(self.throughput_baseline), repr(self.learned_fraction_final),
            int(self.truncated), int(self.zero_observer),
        ]


@dataclass(frozen=True)
class _Job:
    lam_idx: int
    mode_idx: int
    K: int | None
    replication: int


def _expand_jobs(spec: ExperimentSpec) -> list[_Job]:
    jobs = []
    for li in range(len(spec.lambda_grid)):
        for mi, mode in enumerate(MODES):
            if mode not in spec.modes:
                continue
            ks: Sequence[int | None] = [None] if mode == "no_learning" else spec.K_grid
            for K in ks:
                for r in range(spec.replications):
                    jobs.append(_Job(li, mi, K, r))
    return jobs


def episode_seed(spec: ExperimentSpec, lam_idx: int, replication: int) -> int:
    """Seed shared by every mode and K at one (density, replication) point."""
    return mix_seed(spec.master_seed, lam_idx, replication)


def _run_job(spec: ExperimentSpec, job: _Job) -> ResultRow:
    lam = spec.lambda_grid[job.lam_idx]
    mode = MODES[job.mode_idx]
    params = spec.params.with_(lam=lam, K=job.K if job.K is not None else spec.params.K)
    seed = episode_seed(spec, job.lam_idx, job.replication)
    try:
        m = run_episode(
            params, mode, seed, fixed_n=spec.fixed_n, abnormality_pos=spec.abnormality_pos,
            onset_slot=spec.onset_slot, episode_cap=spec.episode_cap,
            belief_rule=spec.belief_rule, phases=spec.phases,
        )
    except EpisodeTruncated as exc:
        log.warning("truncated episode lambda=%s K=%s mode=%s rep=%d", lam, job.K, mode, job.replication)
        m = exc.metrics
    return ResultRow(
        lam, job.K, mode, job.replication, seed, m.n_nodes, m.alarm_delay, m.throughput_post_onset,
        m.throughput_baseline, m.learned_fraction_final, m.truncated, m.zero_observer,
        m.learned_fraction_at_success,
    )


def _run_chunk(spec: ExperimentSpec, jobs: list[_Job]) -> list[ResultRow]:
    return [_run_job(spec, j) for j in jobs]


def _row_order(row: ResultRow, spec: ExperimentSpec) -> tuple:
    return (
        spec.lambda_grid.index(row.lam), MODES.index(row.mode),
        -1 if row.K is None else row.K, row.replication,
    )


@dataclass
class AggregateRow:
    lam: float
    K: int | None
    mode: str
    reps: int
    delay_mean: float
    delay_ci95: float
    delay_reduction_pct: float
    throughput_reduction_pct: float
    learned_pct: float
    learned_ci95: float
    throughput_mean: float = float("nan")

    def csv_fields(self) -> list:
        return [
            repr(self.lam), "" if self.K is None else self.K, self.mode, self.reps,
            repr(self.delay_mean), repr(self.delay_ci95), repr(self.delay_reduction_pct),
            repr(self.throughput_reduction_pct), repr(self.learned_pct), repr(self.learned_ci95),
        ]


def _ci95(values: np.ndarray) -> float:
    if len(values) < 2:
        return float("nan")
    return float(1.96 * values.std(ddof=1) / math.sqrt(len(values)))


def aggregate(rows: Iterable[ResultRow], spec: ExperimentSpec) -> list[AggregateRow]:
    """Per-cell means and 95% CIs; reductions are against the same density's
    no-learning cell (ratio of means over paired seeds)."""
    cells: dict[tuple, list[ResultRow]] = {}
    for r in sorted(rows, key=lambda r: _row_order(r, spec)):
        cells.setdefault((r.lam, r.K, r.mode), []).append(r)
    base: dict[float, tuple[float, float]] = {}
    for (lam, K, mode), rs in cells.items():
        if mode == "no_learning":
            base[lam] = (
                float(np.mean([r.alarm_delay_slots for r in rs])),
                float(np.mean([r.throughput_post_onset for r in rs])),
            )
    out = []
    for (lam, K, mode), rs in cells.items():
        delay = np.array([r.alarm_delay_slots for r in rs], dtype=float)
        thr = np.array([r.throughput_post_onset for r in rs], dtype=float)
        learned = np.array([r.learned_fraction_final for r in rs], dtype=float)
        if lam in base:
            d_red = percent_reduction(delay.mean(), base[lam][0])
            t_red = percent_reduction(thr.mean(), base[lam][1]) if base[lam][1] > 0 else float("nan")
        else:
            d_red = t_red = float("nan")
        out.append(AggregateRow(
            lam, K, mode, len(rs), float(delay.mean()), _ci95(delay), d_red, t_red,
            float(100 * learned.mean()), 100 * _ci95(learned), float(thr.mean()),
        ))
    return out


def breakdown(rows: Iterable[ResultRow], spec: ExperimentSpec) -> list[list]:
    """Delay split by whether the alarm got through in the onset slot, before
    any learning hop happened."""
    cells: dict[tuple, list[ResultRow]] = {}
    for r in sorted(rows, key=lambda r: _row_order(r, spec)):
        cells.setdefault((r.lam, r.K, r.mode), []).append(r)
    out = []
    for (lam, K, mode), rs in cells.items():
        later = [r.alarm_delay_slots for r in rs if r.alarm_delay_slots > 1]
        out.append([
            repr(lam), "" if K is None else K, mode, len(rs),
            sum(1 for r in rs if r.alarm_delay_slots == 1),
            repr(float(np.mean(later))) if later else "",
            repr(float(100 * np.mean([r.learned_fraction_at_success for r in rs]))),
            sum(r.zero_observer for r in rs),
        ])
    return out


def raw_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def aggregate_csv(aggs: Iterable[AggregateRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_HEADER)
    for a in aggs:
        w.writerow(a.csv_fields())
    return buf.getvalue()


def _table_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


@dataclass
class SweepResult:
    rows: list[ResultRow]
    aggregates: list[AggregateRow]

    def cell(self, lam: float, K: int | None, mode: str) -> AggregateRow:
        for a in self.aggregates:
            if a.lam == lam and a.K == K and a.mode == mode:
                return a
        raise KeyError((lam, K, mode))


def run_sweep(spec: ExperimentSpec, workers: int = 1, chunk_size: int = 16) -> SweepResult:
    """Run every (density, mode, K, replication) episode and aggregate.

    ``no_learning`` does not depend on K, so it runs once per density (blank
    K column). Output is identical for any ``workers`` value.

    Raises:
        OSError: if ``spec.output_dir`` cannot be written.
    """
    out_dir = None
    if spec.output_dir is not None:
        out_dir = Path(spec.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(out_dir, os.W_OK):
            raise OSError(f"output directory {out_dir} is not writable")
    jobs = _expand_jobs(spec)
    if workers <= 1:
        rows = _run_chunk(spec, jobs)
    else:
        chunks = [jobs[i:i + chunk_size] for i in range(0, len(jobs), chunk_size)]
        rows = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, [spec] * len(chunks), chunks):
                rows.extend(part)
    rows.sort(key=lambda r: _row_order(r, spec))
    aggs = aggregate(rows, spec)
    if out_dir is not None:
        (out_dir / "raw.csv").write_text(raw_csv(rows))
        (out_dir / "aggregate.csv").write_text(aggregate_csv(aggs))
        (out_dir / "breakdown.csv").write_text(_table_csv(BREAKDOWN_HEADER, breakdown(rows, spec)))
    return SweepResult(rows, aggs)


# --- validation suites -----------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: bool
    checked: int
    counterexample: dict | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def check_oracle_equivalence(
    throughput: Callable[[int, int], float] = analytics.expected_throughput,
    codes: Iterable[int] = range(1, 32),
    max_n: int = 20,
    tol: float = 1e-9,
) -> SuiteResult:
    """Closed-form mean vs. exhaustive enumeration wherever ``C**n <= 1e6``."""
    checked = 0
    for C in codes:
        n = 0
        while n <= max_n and C**n <= analytics.ENUMERATION_LIMIT:
            got = throughput(n, C)
            want = analytics.brute_force_throughput(n, C)
            checked += 1
            if not abs(Fraction(got) - want) <= tol:
                return SuiteResult("oracle_equivalence", False, checked,
                                   {"n": n, "C": C, "closed_form": got, "enumerated": float(want)})
            n += 1
    return SuiteResult("oracle_equivalence", True, checked)


def check_normalization(
    exact: Callable[[int, int, int], float] = analytics.prob_success_exact,
    codes: Iterable[int] = (3, 7, 15, 31),
    max_n: int = 100,
    tol: float = 1e-9,
) -> SuiteResult:
    """``sum_s binom(n, s) * P(exactly s) == 1`` and every weight in [0, 1]."""
    checked = 0
    for C in codes:
        for n in range(max_n + 1):
            top = analytics.s_max(n, C)
            total = 0.0
            for s in range(top + 1):
                p = exact(s, n, C)
                if not -tol <= p <= 1 + tol:
                    return SuiteResult("normalization", False, checked, {"n": n, "C": C, "s": s, "value": p})
                total += comb(n, s) * p
            checked += 1
            if abs(total - 1.0) > tol:
                return SuiteResult("normalization", False, checked,
                                   {"n": n, "C": C, "s": top, "total": total})
    return SuiteResult("normalization", True, checked)


def _product_likelihood_argmax(signals: Sequence[int], p11: float, p10: float) -> int:
    l1 = Fraction(1)
    l0 = Fraction(1)
    f11, f10 = Fraction(p11), Fraction(p10)
    for e in signals:
        l1 *= f11 if e else 1 - f11
        l0 *= f10 if e else 1 - f10
    return int(l1 >= l0)


def check_lrt_vs_ml(
    belief: Callable[[Sequence[int], float, float], int] = learning.private_belief_known,
    max_len: int = 12,
    grid: Sequence[tuple[float, float]] = ((0.8, 0.001), (0.6, 0.4), (0.9, 0.5), (0.3, 0.1), (0.55, 0.45)),
) -> SuiteResult:
    """Log-ratio belief vs. exact-rational product likelihood, every window."""
    checked = 0
    for p11, p10 in grid:
        for length in range(1, max_len + 1):
            for sig in itertools.product((0, 1), repeat=length):
                got = belief(sig, p11, p10)
                want = _product_likelihood_argmax(sig, p11, p10)
                checked += 1
                if got != want:
                    return SuiteResult("lrt_vs_ml", False, checked,
                                       {"signals": list(sig), "p11": p11, "p10": p10, "got": got, "want": want})
    return SuiteResult("lrt_vs_ml", True, checked)


def check_containment(
    n_topologies: int = 100,
    K_values: Iterable[int] = range(2, 11),
    params: SystemParams | None = None,
    seed: int = 7,
) -> SuiteResult:
    """With p10 = 0, nobody beyond ``r_d + (K-2) r_c`` ever believes in the alarm."""
    params = (params or SystemParams(lam=0.8)).with_(p10=0.0)
    checked = 0
    for t in range(n_topologies):
        topo = sample_deployment(params, np.random.default_rng((seed, t)))
        dist = topo.distance_to_abnormality()
        for K in K_values:
            p = params.with_(K=K)
            rng = np.random.default_rng((seed, t, K))
            st = learning.run_propagation(topo, p, rng)
            reach = analytics.effective_observation_range(p.r_d, p.r_c, K)
            bad = np.nonzero((st.x == 1) & (dist > reach + 1e-12))[0]
            checked += 1
            if len(bad):
                i = int(bad[0])
                return SuiteResult("containment", False, checked,
                                   {"K": K, "node": i, "distance": float(dist[i]), "range": reach})
    return SuiteResult("containment", True, checked)


def check_delay_vs_closed_form(
    N: int = 200, episodes: int = 2000, seed: int = 11, params: SystemParams | None = None,
) -> SuiteResult:
    """No-learning mean delay within 3 standard errors of the closed form."""
    p = (params or SystemParams()).with_(N=N)
    delays = np.array([
        run_episode(p, "no_learning", mix_seed(seed, r), fixed_n=N).alarm_delay for r in range(episodes)
    ], dtype=float)
    mean = float(delays.mean())
    se = float(delays.std(ddof=1) / math.sqrt(len(delays)))
    want = analytics.expected_delay_no_learning(p)
    ok = abs(mean - want) <= 3 * se
    return SuiteResult("delay_vs_closed_form", ok, episodes,
                       None if ok else {"N": N, "empirical": mean, "se": se, "closed_form": want})


def validate(
    throughput: Callable[[int, int], float] = analytics.expected_throughput,
    exact: Callable[[int, int, int], float] = analytics.prob_success_exact,
    belief: Callable[[Sequence[int], float, float], int] = learning.private_belief_known,
    quick: bool = False,
) -> list[SuiteResult]:
    """Run every self-check suite. The callables exist for mutation testing."""
    return [
        check_oracle_equivalence(throughput),
        check_normalization(exact),
        check_lrt_vs_ml(belief),
        check_containment(n_topologies=10 if quick else 100),
        check_delay_vs_closed_form(episodes=500 if quick else 2000),
    ]
