"""Command line entry point.

Usage::

    privsub <task> --config cfg.json [--seed N] [--trials N] [--out path] [--audit] [--timing]
    privsub generate --spec spec.json [--seed N] --out path

Exit codes: 0 ok, 1 usage or config error, 2 solver error, 3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from privsub.harness import (
    AUDIT_FOR_TASK,
    TASKS,
    ConfigError,
    ExperimentConfig,
    rows_to_csv,
    run_audit,
    run_experiment,
)
from privsub.instances import SpecError, generate_instance, save_instance

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_AUDIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="privsub", description="Differentially private combinatorial optimization experiments.")
    parser.add_argument("task", nargs="?", choices=TASKS + ("generate",), help="task to run")
    parser.add_argument("--task", dest="task_flag", choices=TASKS, help="task (alternative to the positional)")
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--spec", help="generator spec JSON (generate only)")
    parser.add_argument("--seed", type=int, help="run a single seed")
    parser.add_argument("--trials", type=int, help="trials per seed")
    parser.add_argument("--out", help="output path (CSV for solvers, JSON for audits, instance for generate)")
    parser.add_argument("--audit", action="store_true", help="also run the exact audit matching the task")
    parser.add_argument("--timing", action="store_true", help="add a runtime_ms column")
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _generate(args) -> int:
    if not args.spec or not args.out:
        raise UsageError("generate needs --spec and --out")
    with open(args.spec) as fh:
        spec = json.load(fh)
    save_instance(generate_instance(spec, args.seed), args.out)
    return EXIT_OK


def main(argv: Optional[list] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        task = args.task or args.task_flag
        if task is None:
            raise UsageError("privsub: a task is required")
        if args.task and args.task_flag and args.task != args.task_flag:
            raise UsageError("privsub: positional task and --task disagree")
        if task == "generate":
            return _generate(args)
        base = {"task": task}
        if args.config:
            with open(args.config) as fh:
                base = {**json.load(fh), "task": task}
        config = ExperimentConfig.from_dict(
            base,
            seeds=[args.seed] if args.seed is not None else None,
            trials=args.trials,
            out=args.out,
            timing=args.timing or None,
        )
    except (UsageError, ConfigError, SpecError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if task == "audit":
            report = run_audit(config.audit_target, config.audit_eps)
            _emit(report.to_json() + "\n", config.out)
            return EXIT_OK if report.passed else EXIT_AUDIT
        rows = run_experiment(config)
        _emit(rows_to_csv(rows, config.timing), config.out)
        if args.audit:
            report = run_audit(AUDIT_FOR_TASK[task])
            audit_out = f"{config.out}.audit.json" if config.out else None
            _emit(report.to_json() + "\n", audit_out)
            if not report.passed:
                return EXIT_AUDIT
    except (ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # solver failures surface as exit 2
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
