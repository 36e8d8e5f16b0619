"""Command-line interface.

Every verb is a thin wrapper over `Session`; failures print one
machine-parseable `PEAK_ERROR <code> <message>` line on stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigError, PeakError
from ..perf import Exhaustive, RandomSearch, Tuner
from .session import Session, SessionConfig


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peak",
        description="Checkpointed kernel optimization workflows driven by "
                    "natural-language transformations")
    parser.add_argument("--config", type=Path, help="session config JSON")
    parser.add_argument("--root", type=Path, help="workflow root directory")
    parser.add_argument("--backend", help="backend id (default cpu-ref)")
    parser.add_argument("--mock-fixtures", type=Path,
                        help="mock LLM fixture directory (offline mode)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("init", help="seed a workflow and record references")
    p.add_argument("spec", type=Path)
    p.add_argument("device", type=Path)
    p.add_argument("host", type=Path)
    p.add_argument("macros", type=Path, nargs="?")
    p.add_argument("--kernel-name")
    p.add_argument("--label", default="seed")

    p = sub.add_parser("transform", help="apply one transformation and commit")
    p.add_argument("checkpoint")
    p.add_argument("name")

    p = sub.add_parser("validate", help="re-validate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--budget", type=int)

    p = sub.add_parser("evaluate", help="search tuning space for best runtime")
    p.add_argument("checkpoint")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--exhaustive", action="store_true")
    group.add_argument("--sample", type=int, metavar="N")
    group.add_argument("--tuner", metavar="ID")
    p.add_argument("--budget", type=int, default=100,
                   help="iteration budget for --tuner")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-top", type=int)
    p.add_argument("--flops", help="flops-per-run expression, e.g. '2*n*n*n'")
    p.add_argument("--confirm-best", type=int, default=0)

    p = sub.add_parser("log", help="lineage forest")

    p = sub.add_parser("diff", help="compare two checkpoints")
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("restore", help="write a checkpoint's bundle to a directory")
    p.add_argument("checkpoint")
    p.add_argument("--to", type=Path, required=True)

    p = sub.add_parser("tag", help="name a checkpoint")
    p.add_argument("name")
    p.add_argument("checkpoint")

    p = sub.add_parser("trajectory", help="speedups along the lineage to a tip")
    p.add_argument("checkpoint")
    p.add_argument("--reference-ms", type=float)

    p = sub.add_parser("reliability", help="repeated one-shot application")
    p.add_argument("checkpoint")
    p.add_argument("transform")
    p.add_argument("--trials", type=int, required=True)

    p = sub.add_parser("run-sequence", help="apply transformations listed in a file")
    p.add_argument("file", type=Path)
    p.add_argument("--start", default="seed")

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7433)

    p = sub.add_parser("transformations", help="list the catalog")

    return parser


def make_config(args: argparse.Namespace) -> SessionConfig:
    overrides = {
        "workflow_root": args.root,
        "backend": args.backend,
        "mock_fixtures": args.mock_fixtures,
    }
    if args.config:
        return SessionConfig.from_file(args.config, **overrides)
    if args.root is None:
        raise ConfigError("pass --root or --config")
    return SessionConfig(**{k: v for k, v in overrides.items() if v is not None})


READ_ONLY_VERBS = {"log", "diff", "trajectory", "transformations"}


def run(args: argparse.Namespace) -> int:
    if args.verb == "serve":
        from .api import serve
        serve(make_config(args), host=args.host, port=args.port)
        return 0

    writer = args.verb not in READ_ONLY_VERBS
    with Session(make_config(args), writer=writer) as session:
        return _dispatch(session, args)


def _dispatch(session: Session, args: argparse.Namespace) -> int:
    if args.verb == "init":
        ckpt = session.init(
            args.spec, args.device, args.host, args.macros,
            kernel_name=args.kernel_name, label=args.label)
        print(f"seed committed: {ckpt.id.hash}")
        print(f"references: {session.store.references_path}")
        return 0

    if args.verb == "transform":
        outcome, ckpt = session.transform(args.checkpoint, args.name)
        for attempt in outcome.attempts:
            line = f"  pass {attempt.pass_index} attempt {attempt.attempt}: {attempt.status}"
            if attempt.stderr_excerpt:
                line += f" ({attempt.stderr_excerpt.splitlines()[0][:120]})"
            print(line)
        if ckpt is None:
            print(f"PEAK_ERROR transform-failed {args.name}: {outcome.status}",
                  file=sys.stderr)
            return 1
        print(f"committed: {ckpt.id.hash}")
        return 0

    if args.verb == "validate":
        report = session.validate_checkpoint(args.checkpoint, args.budget)
        print(f"verdict: {report.verdict} ({report.sampled} samples, "
              f"{json.dumps(report.counts())})")
        if report.reason:
            print(f"reason: {report.reason}")
        return 0 if report.passed else 1

    if args.verb == "evaluate":
        if args.tuner:
            strategy = Tuner(args.tuner, args.budget, args.repeats, args.seed)
        elif args.sample is not None:
            strategy = RandomSearch(args.sample, args.seed)
        else:
            strategy = Exhaustive()
        report = session.evaluate_checkpoint(
            args.checkpoint, strategy=strategy, keep_top=args.keep_top,
            flops_expression=args.flops, confirm_best=args.confirm_best)
        print(f"evaluated {report.evaluated} points "
              f"({report.pruned_invalid} invalid pruned)")
        print(f"best: {report.best.mean_time_ms:.6f} ms at "
              f"{json.dumps(report.best.tuning_values, sort_keys=True)}")
        if report.best_gflops is not None:
            print(f"best gflops: {report.best_gflops:.3f}")
        return 0

    if args.verb == "log":
        for entry in session.log_tree():
            parent = entry["parent"][:12] if entry["parent"] else "-"
            best = (f"{entry['best_time_ms']:.4f} ms"
                    if entry["best_time_ms"] is not None else "unevaluated")
            verdict = entry["validation_verdict"] or "unvalidated"
            name = entry["transformation_name"] or entry["label"] or "seed"
            print(f"{entry['short']}  parent={parent:12}  {name:16} "
                  f"{verdict:12} {best}")
        return 0

    if args.verb == "diff":
        result = session.diff(args.a, args.b)
        for kind, text in result.regions.items():
            if text:
                print(f"--- {kind} ---")
                print(text)
        if result.spec:
            print("--- spec ---")
            print(result.spec)
        if result.metadata:
            print(f"metadata: {json.dumps(result.metadata)}")
        if result.empty:
            print("(identical)")
        return 0

    if args.verb == "restore":
        from ..context import save_bundle
        ctx = session.store.restore(session.store.resolve(args.checkpoint))
        save_bundle(ctx, args.to)
        print(f"restored to {args.to}")
        return 0

    if args.verb == "tag":
        ckpt_id = session.tag(args.name, args.checkpoint)
        print(f"{args.name} -> {ckpt_id.hash}")
        return 0

    if args.verb == "trajectory":
        trajectory = session.trajectory(args.checkpoint, args.reference_ms)
        header = f"{'ckpt':14} {'transform':16} {'ms':>12} {'cumul':>8} {'step':>8}"
        if args.reference_ms is not None:
            header += f" {'%ref':>8}"
        print(header)
        for step in trajectory.steps:
            line = (f"{step.checkpoint.id.short:14} "
                    f"{step.checkpoint.transformation_name or 'seed':16} "
                    f"{step.best_time_ms:12.4f} {step.cumulative_speedup:8.3f} "
                    f"{step.step_speedup:8.3f}")
            if step.percent_of_reference is not None:
                line += f" {step.percent_of_reference:8.2f}"
            print(line)
        return 0

    if args.verb == "reliability":
        report = session.reliability(args.checkpoint, args.transform, args.trials)
        print(f"success:    {report.success_rate:.3f}")
        print(f"compile:    {report.compile_failure_rate:.3f}")
        print(f"reference:  {report.reference_failure_rate:.3f}")
        print(f"extraction: {report.extraction_failure_rate:.3f}")
        return 0

    if args.verb == "run-sequence":
        names = [line.strip() for line in args.file.read_text().splitlines()
                 if line.strip() and not line.strip().startswith("#")]
        committed = session.run_sequence(names, start=args.start)
        for name, ckpt in zip(names, committed):
            print(f"{name}: {ckpt.id.hash}")
        return 0

    if args.verb == "transformations":
        for name in sorted(session.catalog):
            t = session.catalog[name]
            scope = ",".join(t.backend_only) if t.backend_only else "all"
            print(f"{name:18} passes={t.pass_count} calls={t.llm_calls:2} "
                  f"backends={scope:14} {t.description}")
        return 0

    raise ConfigError(f"unhandled verb {args.verb}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except PeakError as exc:
        print(f"PEAK_ERROR {exc.code} {exc.message}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"PEAK_ERROR invalid-argument {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
