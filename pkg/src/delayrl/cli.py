"""Command-line entry point.

Subcommands: run, equivalence, bench, golden, score. Every check exits
nonzero on failure so the tool scripts cleanly.
"""

from __future__ import annotations

import argparse
import json
import sys

from .channel import DelaySpec
from .harness import (REFERENCE_TRACES, RunConfig, bench_overhead, bench_scaling,
                      equivalence_check, golden_trace, normalized_score, run)


def _add_run(sub):
    p = sub.add_parser("run", help="train/evaluate per config, write curves and summary")
    p.add_argument("--config", "-c", help="YAML config file")
    p.add_argument("--env", help="environment name")
    p.add_argument("--mode", help="scheduler variant")
    p.add_argument("--o-max", type=int, dest="o_max")
    p.add_argument("--o-pmax", type=int, dest="o_pmax")
    p.add_argument("--delay", help="uniform | point")
    p.add_argument("--learner", help="tabular | bpql | random | none")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--episodes", type=int)
    p.add_argument("--total-steps", type=int, dest="total_steps")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--workers", type=int)


def _add_equivalence(sub):
    p = sub.add_parser("equivalence",
                       help="verify random-delay run equals the constant-delay run")
    p.add_argument("--env", default="pendulum")
    p.add_argument("--policy", default="random",
                   help="random | zero | actor:<checkpoint>")
    p.add_argument("--o-max", type=int, nargs="+", default=[3], dest="o_max")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--variant", default="conservative",
                   help="scheduling rule on the random-delay side")


def _add_bench(sub):
    p = sub.add_parser("bench", help="scheduler runtime overhead and scaling")
    p.add_argument("--env", default="gridworld")
    p.add_argument("--o-max", type=int, default=20, dest="o_max")
    p.add_argument("--steps", type=int, default=1_000_000)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--scaling", action="store_true",
                   help="also measure per-step cost at o_max 16 vs 32")


def _add_golden(sub):
    p = sub.add_parser("golden", help="replay reference delay schedules")
    p.add_argument("--trace", help="CSV trace file (default: built-in references)")


def _add_score(sub):
    p = sub.add_parser("score", help="delay-free normalized score")
    p.add_argument("--alg", type=float, required=True)
    p.add_argument("--random", type=float, required=True)
    p.add_argument("--free", type=float, required=True)


def cmd_run(args) -> int:
    if args.config:
        config = RunConfig.from_file(args.config)
    else:
        config = RunConfig()
    for key in ("env", "mode", "o_max", "o_pmax", "delay", "learner", "seeds",
                "episodes", "total_steps", "out_dir", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, key, value)
    config.validate()
    result = run(config)
    std = f" +- {result.std:.3f}" if result.std is not None else " (single seed)"
    print(f"final-window mean return: {result.mean:.3f}{std}")
    print(f"curves: {result.curves_path}\nsummary: {result.summary_path}")
    return 0


def cmd_equivalence(args) -> int:
    failures = 0
    for o_max in args.o_max:
        spec = DelaySpec.uniform(o_max)
        for seed in args.seeds:
            report = equivalence_check(args.env, args.policy, o_max, spec,
                                       args.steps, seed, variant=args.variant)
            tag = f"o_max={o_max} seed={seed}"
            if report["status"] == "identical":
                print(f"{tag}: identical over {report['steps']} steps")
            else:
                failures += 1
                print(f"{tag}: {report['status']} {report.get('first_divergence', report.get('detail'))}")
    return 1 if failures else 0


def cmd_bench(args) -> int:
    report = bench_overhead(args.env, args.o_max, args.steps, args.reps)
    print(json.dumps(report, indent=2))
    if args.scaling:
        print(json.dumps(bench_scaling(args.env, (16, 32), max(args.steps // 3, 1),
                                       args.reps), indent=2))
    ratio = report.get("ratio")
    return 0 if ratio is None or ratio <= 1.05 else 1


def cmd_golden(args) -> int:
    if args.trace:
        with open(args.trace) as fh:
            sources = {args.trace: fh.read()}
    else:
        sources = REFERENCE_TRACES
    failed = 0
    for name, text in sources.items():
        report = golden_trace(text)
        print(f"{name}: {report['status']}"
              + (f" ({report['events']} events)" if report["status"] == "pass"
                 else f" {report['first_mismatch']}"))
        failed += report["status"] != "pass"
    return 1 if failed else 0


def cmd_score(args) -> int:
    print(f"{normalized_score(args.alg, args.random, args.free):.4f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="delayrl",
                                     description="delayed-control simulator and learners")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_equivalence(sub)
    _add_bench(sub)
    _add_golden(sub)
    _add_score(sub)
    args = parser.parse_args(argv)
    handler = {
        "run": cmd_run,
        "equivalence": cmd_equivalence,
        "bench": cmd_bench,
        "golden": cmd_golden,
        "score": cmd_score,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
