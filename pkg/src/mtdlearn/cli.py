"""Command line entry point: ``analytic``, ``simulate``, ``sweep``, ``validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analytics, harness
from .config import ConfigError, load_config, parse_list
from .learning import format_trace
from .mac import MODES, EpisodeTruncated, episode_streams, format_slot_trace, run_episode
from .params import SystemParams
from .topology import sample_deployment

ANALYTIC_OPS = (
    "s_max", "at_least", "exact", "throughput", "brute_force", "alarm_success", "delay",
    "effective_range", "belief_inside", "belief_outside",
)


def _settings(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in (("seed", "master_seed"), ("reps", "reps")):
        if getattr(args, flag, None) is not None:
            cfg[key] = getattr(args, flag)
    if getattr(args, "k", None):
        cfg["K"] = parse_list(args.k, int)
    if getattr(args, "lam", None):
        cfg["lambda"] = parse_list(args.lam, float)
    if getattr(args, "mode", None):
        cfg["mode"] = parse_list(args.mode, str)
    return cfg


def _params(cfg: dict, **over) -> SystemParams:
    kw = {}
    for key, field in (("R", "R"), ("l", "l"), ("tau", "tau"), ("T", "T"), ("r_c", "r_c"),
                       ("r_d", "r_d"), ("p11", "p11"), ("p10", "p10")):
        if key in cfg:
            kw[field] = cfg[key]
    if "lambda" in cfg:
        kw["lam"] = cfg["lambda"][0]
    if "K" in cfg:
        kw["K"] = cfg["K"][0]
    kw.update(over)
    return SystemParams(**kw)


def _abnormality(cfg: dict):
    if "abnormality_x" in cfg or "abnormality_y" in cfg:
        R = cfg.get("R", SystemParams().R)
        return (cfg.get("abnormality_x", R / 2), cfg.get("abnormality_y", R / 2))
    return None


def cmd_analytic(args) -> int:
    p = SystemParams(N=args.N, l=args.l, T=args.T, r_c=args.r_c, r_d=args.r_d,
                     p11=args.p11, p10=args.p10, K=args.K)
    C = args.C if args.C is not None else p.C
    op = args.op
    if op == "s_max":
        value = analytics.s_max(args.n, C)
    elif op == "at_least":
        value = analytics.prob_success_at_least(args.s, args.n, C)
    elif op == "exact":
        value = analytics.prob_success_exact(args.s, args.n, C)
    elif op == "throughput":
        value = analytics.expected_throughput(args.n, C)
    elif op == "brute_force":
        value = float(analytics.brute_force_throughput(args.n, C))
    elif op == "alarm_success":
        value = analytics.alarm_success_prob(p)
    elif op == "delay":
        value = analytics.expected_delay_no_learning(p)
    elif op == "effective_range":
        value = analytics.effective_observation_range(p.r_d, p.r_c, p.K)
    elif op == "belief_inside":
        value = analytics.belief_correct_prob_inside(p.p11, p.K)
    else:
        value = analytics.belief_correct_prob_outside(
            p.p11, args.kappa, args.eta, p.p10 if args.full else None)
    print(json.dumps({"op": op, "value": value}))
    return 0


def cmd_simulate(args) -> int:
    cfg = _settings(args)
    params = _params(cfg)
    mode = cfg.get("mode", ["finite_memory"])[0]
    seed = cfg.get("master_seed", 0)
    kw = dict(
        fixed_n=args.fixed_n, abnormality_pos=_abnormality(cfg), onset_slot=cfg.get("onset_slot"),
        episode_cap=cfg.get("episode_cap", 10**6), trace=args.trace, phases=args.phases,
        belief_rule=args.belief_rule,
    )
    truncated = False
    try:
        m = run_episode(params, mode, seed, **kw)
    except EpisodeTruncated as exc:
        m, truncated = exc.metrics, True
    summary = {
        "mode": mode, "lambda": params.lam, "K": params.K, "seed": seed, "N_actual": m.n_nodes,
        "alarm_delay_slots": m.alarm_delay, "alarm_delay_seconds": m.alarm_delay * params.tau,
        "throughput_post": m.throughput_post_onset, "throughput_base": m.throughput_baseline,
        "learned_fraction": m.learned_fraction_final, "zero_observer": m.zero_observer,
        "truncated": truncated,
    }
    print(json.dumps(summary))
    if args.trace:
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "slot_trace.tsv").write_text(format_slot_trace(m.slot_trace or []))
        if m.learning_trace is not None:
            (out / "learning_trace.tsv").write_text(format_trace(m.learning_trace))
        # same stream as run_episode, so this is the episode's deployment
        topo = sample_deployment(params, episode_streams(seed)["topology"], fixed_n=args.fixed_n,
                                 abnormality_pos=_abnormality(cfg))
        (out / "topology.tsv").write_text(topo.dump())
    return 1 if truncated else 0


def cmd_sweep(args) -> int:
    cfg = _settings(args)
    spec = harness.ExperimentSpec(
        params=_params(cfg),
        K_grid=cfg.get("K", list(range(2, 16))),
        lambda_grid=cfg.get("lambda", [0.5, 0.8]),
        modes=cfg.get("mode", ["no_learning", "finite_memory"]),
        replications=cfg.get("reps", 500),
        master_seed=cfg.get("master_seed", harness.ExperimentSpec.master_seed),
        output_dir=args.out or "results",
        fixed_n=args.fixed_n,
        abnormality_pos=_abnormality(cfg),
        onset_slot=cfg.get("onset_slot"),
        episode_cap=cfg.get("episode_cap", 10**6),
        belief_rule=args.belief_rule,
        phases=args.phases,
    )
    result = harness.run_sweep(spec, workers=args.workers)
    sys.stdout.write(harness.aggregate_csv(result.aggregates))
    n_trunc = sum(r.truncated for r in result.rows)
    if n_trunc:
        logging.warning("%d truncated episodes (flagged in raw.csv)", n_trunc)
    return 0


def cmd_validate(args) -> int:
    results = harness.validate(quick=args.quick)
    report = {r.name: r.as_dict() for r in results}
    print(json.dumps(report, indent=2))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtdlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="evaluate a closed-form quantity")
    a.add_argument("op", choices=ANALYTIC_OPS)
    a.add_argument("--n", type=int, default=1)
    a.add_argument("--s", type=int, default=0)
    a.add_argument("--C", type=int, default=None, help="code count (default 2**l - 1)")
    a.add_argument("--N", type=int, default=1250)
    a.add_argument("--l", type=int, default=4)
    a.add_argument("--T", type=int, default=20)
    a.add_argument("--r-c", dest="r_c", type=float, default=2.0)
    a.add_argument("--r-d", dest="r_d", type=float, default=10.0)
    a.add_argument("--K", type=int, default=7)
    a.add_argument("--p11", type=float, default=0.8)
    a.add_argument("--p10", type=float, default=0.001)
    a.add_argument("--kappa", type=int, default=0)
    a.add_argument("--eta", type=int, default=0)
    a.add_argument("--full", action="store_true", help="keep the p10 term in belief_outside")
    a.set_defaults(func=cmd_analytic)

    def run_flags(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--k")
        p.add_argument("--lambda", dest="lam")
        p.add_argument("--mode")
        p.add_argument("--fixed-n", dest="fixed_n", type=int)
        p.add_argument("--phases", choices=("balanced", "independent"), default="balanced")
        p.add_argument("--belief-rule", dest="belief_rule", choices=("unknown", "known"), default="unknown")

    s = sub.add_parser("simulate", help="run one episode")
    run_flags(s)
    s.add_argument("--trace", action="store_true", help="write slot/learning/topology tables to --out")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a seeded (K, lambda) sweep")
    run_flags(w)
    w.add_argument("--reps", type=int)
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="run every oracle/invariant suite")
    v.add_argument("--quick", action="store_true")
    v.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "mode", None):
        bad = [m for m in parse_list(args.mode, str) if m not in MODES]
        if bad:
            print(f"unknown mode(s): {', '.join(bad)}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
