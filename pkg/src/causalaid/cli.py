"""Command-line entry point.

    causalaid run --config <path|bundled name> [--seed N] [--out DIR] [--format text|csv|json]
    causalaid dag check <path> [--max-size K]
    causalaid synth --spec <name> --n N --seed S --out <csv>

Exit status: 0 when every grid cell was estimated, 2 when some cells are
inestimable, 1 on a fatal configuration or data error. ``CAUSALAID_LOG``
sets the log level (e.g. ``INFO``); it affects verbosity only.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .graph import (DagError, backdoor_satisfied, load_dag, minimal_backdoor_sets,
                    parent_adjustment_set)
from .scm import benchmark_suite, get_benchmark, sample
from .study import FORMATS, ConfigError, emit_report, load_config, render_text, run_study
from .tabular import TableError

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
LOG_ENV = "CAUSALAID_LOG"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalaid",
                                     description="Causal effect estimation from tabular data.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a study described by a YAML config")
    run.add_argument("--config", required=True,
                     help="config path, or a bundled name (somalia_country, baidoa_monthly)")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--format", choices=FORMATS, action="append",
                     help="report format (repeatable; default: all)")

    dag = sub.add_parser("dag", help="DAG utilities")
    dag_sub = dag.add_subparsers(dest="dag_command", required=True)
    check = dag_sub.add_parser("check", help="validate a DAG and print adjustment sets")
    check.add_argument("path")
    check.add_argument("--max-size", type=int, default=5,
                       help="largest minimal backdoor set to enumerate (default 5)")

    synth = sub.add_parser("synth", help="sample a benchmark SCM to CSV")
    synth.add_argument("--spec", required=True, choices=[name for _, name in benchmark_suite()])
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--out", required=True)
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config, seed=args.seed, output=args.out)
    report = run_study(config)
    formats = tuple(dict.fromkeys(args.format)) if args.format else FORMATS
    for path in emit_report(report, config.output, formats):
        logging.getLogger(__name__).info("wrote %s", path)
    sys.stdout.write(render_text(report))
    return EXIT_OK if report.complete else EXIT_PARTIAL


def _cmd_dag_check(args) -> int:
    dag = load_dag(args.path)
    parents = parent_adjustment_set(dag)
    ok = backdoor_satisfied(dag, parents.members)
    print(f"nodes: {len(dag.nodes)}  edges: {len(dag.edges)}")
    print(f"treatment: {dag.treatment}  outcome: {dag.outcome}")
    print(f"parent adjustment set: {{{', '.join(parents.sorted())}}} "
          f"(backdoor {'satisfied' if ok else 'NOT satisfied'})")
    sets = minimal_backdoor_sets(dag, args.max_size)
    print(f"minimal backdoor sets (size <= {args.max_size}):")
    for s in sets:
        print(f"  {{{', '.join(s.sorted())}}}")
    if not sets:
        print("  none")
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be positive")
    frame = sample(get_benchmark(args.spec), args.n, args.seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, lineterminator="\n", float_format="%.17g")
    print(f"wrote {len(frame)} rows to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "dag": _cmd_dag_check, "synth": _cmd_synth}[args.command]
    try:
        return handler(args)
    except (ConfigError, DagError, TableError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
