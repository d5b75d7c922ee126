"""Command-line interface: ``toporeparam run | bench | list-tasks``.

Exit codes: 0 success, 2 task validation error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import fnmatch
import glob
import logging
import sys

from .fem import SingularSystemError
from .runner import DEFAULT_ITERS, METHODS, NEAR_BEST, bench, emit_artifacts, run
from .tasks import TaskValidationError, builtin_task_names
from .validation import check_task

EXIT_OK, EXIT_TASK, EXIT_SOLVER = 0, 2, 3


def _resolve_tasks(spec: str):
    if spec == "all":
        return [check_task(n) for n in builtin_task_names()]
    names = [n for n in builtin_task_names() if fnmatch.fnmatch(n, spec)]
    paths = sorted(glob.glob(spec))
    if not names and not paths:
        raise TaskValidationError(f"no built-in task or task file matches {spec!r}")
    return [check_task(n) for n in names] + [check_task(p) for p in paths]


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return methods


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toporeparam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize one task with one method")
    p.add_argument("--task", required=True, help="task file or built-in task name")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=None, help=f"iteration budget (default {DEFAULT_ITERS})")
    p.add_argument("--init", choices=("constant", "cnn"), default="constant", help="baseline initialization")
    p.add_argument("--out", required=True, help="output directory")

    b = sub.add_parser("bench", help="tasks x methods x seeds benchmark")
    b.add_argument("--tasks", default="all", help="'all', a glob over built-in names, or a glob of task files")
    b.add_argument("--methods", type=_methods, default=list(METHODS), help="comma-separated list")
    b.add_argument("--seeds", type=int, default=5, help="number of seeds (0..N-1)")
    b.add_argument("--iters", type=int, default=None)
    b.add_argument("--jobs", type=int, default=1, help="parallel ensemble members")
    b.add_argument("--out", required=True)

    sub.add_parser("list-tasks", help="list built-in tasks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "list-tasks":
            for name in builtin_task_names():
                task = check_task(name)
                print(f"{name}\t{task.nelx}x{task.nely}\tV0={task.volfrac}\t{task.category}")
        elif args.command == "run":
            task = check_task(args.task, check_solvable=True)
            result = run(task, args.method, args.seed, args.iters, args.init)
            paths = emit_artifacts(result, args.out)
            print(f"{task.name} {args.method}: compliance {result.compliance:.6g} -> {paths['design'].parent}")
        else:
            tasks = _resolve_tasks(args.tasks)
            summary, _ = bench(tasks, args.methods, range(args.seeds), args.iters, args.out, n_jobs=args.jobs)
            counts = summary.near_best_counts()
            for method in summary.methods:
                print(f"{method}: near-best (score <= {NEAR_BEST}) on {counts[method]}/{len(summary.tasks)} tasks")
    except TaskValidationError as exc:
        print(f"task error: {exc}", file=sys.stderr)
        return EXIT_TASK
    except SingularSystemError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
