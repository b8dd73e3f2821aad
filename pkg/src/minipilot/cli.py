"""Command line entry point.

Subcommands: run one session, sweep an experiment matrix, analyze a trace,
benchmark the schedulers, and render figures. Exit status is zero only when
every session finished with all units done.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import analytics, bench, plots
from .config import validate_config
from .matrix import run_matrix, summary_text
from .runtime import run_session

REPORTS = ("ttx", "ru", "concurrency", "events", "throughput")
FIGURES = ("utilization", "concurrency", "events", "schedbench")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minipilot",
        description="Desk-scale pilot-job runtime and trace analytics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one session from a config file")
    p_run.add_argument("config")
    _session_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_matrix = sub.add_parser("matrix", help="run an experiment matrix")
    p_matrix.add_argument("config")
    _session_flags(p_matrix)
    p_matrix.set_defaults(func=_cmd_matrix)

    p_an = sub.add_parser("analyze", help="compute metrics from a trace")
    p_an.add_argument("trace")
    p_an.add_argument("--report", choices=REPORTS, required=True)
    p_an.add_argument("--out", default=None, help="directory for csv tables")
    p_an.set_defaults(func=_cmd_analyze)

    p_bench = sub.add_parser("bench",
                             help="measure scheduler time per placement")
    p_bench.add_argument("--blocks", default="64,256,1024,8192",
                         help="comma-separated concurrent-task scales")
    p_bench.add_argument("--cores-per-task", type=int, default=4)
    p_bench.add_argument("--out", default="bench")
    p_bench.set_defaults(func=_cmd_bench)

    p_plot = sub.add_parser("plot", help="render a figure from traces")
    p_plot.add_argument("figure", choices=FIGURES)
    p_plot.add_argument("inputs", nargs="+",
                        help="trace files (or the bench csv for schedbench)")
    p_plot.add_argument("--out", default="plots")
    p_plot.set_defaults(func=_cmd_plot)
    return parser


def _session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("real", "virtual"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=("on", "off"), default=None)
    p.add_argument("--out", default=None, help="output directory")


def _overrides(args) -> dict:
    ov = {}
    if args.backend is not None:
        ov["backend"] = args.backend
    if args.seed is not None:
        ov["seed"] = args.seed
    if args.profile is not None:
        ov["profile"] = args.profile == "on"
    if args.out is not None:
        ov["out_dir"] = args.out
    return ov


def _cmd_run(args) -> int:
    resolved = validate_config(args.config, _overrides(args))
    if resolved.kind != "session":
        print("config defines a matrix; use the matrix subcommand",
              file=sys.stderr)
        return 2
    print(resolved.describe())
    result = run_session(resolved.session)
    states = sorted(set(result.states.values()))
    print(f"session {result.session_id}: {len(result.states)} units, "
          f"states={states}, trace={result.trace_path}")
    return 0 if result.clean else 1


def _cmd_matrix(args) -> int:
    resolved = validate_config(args.config, _overrides(args))
    if resolved.kind != "matrix":
        print("config defines a single session; use the run subcommand",
              file=sys.stderr)
        return 2
    rows = run_matrix(resolved.matrix)
    print(summary_text(rows))
    return 0 if all(r.clean and not r.error for r in rows) else 1


def _cmd_analyze(args) -> int:
    trace = analytics.load_trace(args.trace)
    out = Path(args.out) if args.out else None
    if args.report == "ttx":
        s = analytics.compute_ttx(trace)
        rows = [{"ttx_s": s.ttx, "ideal_ttx_s": s.ideal_ttx,
                 "overhead_pct": 100.0 * s.overhead_ratio,
                 "generations": s.generations,
                 "mean_payload_s": s.mean_payload, "units": s.n_units}]
    elif args.report == "ru":
        rows = [analytics.compute_utilization(trace)]
    elif args.report == "concurrency":
        rows = []
        for name, pair in analytics.STATE_INTERVALS.items():
            series = analytics.concurrency_series(trace, pair)
            rows.append({"interval": name,
                         "max": analytics.max_concurrency(series),
                         "integral_core_s": analytics.series_integral(series)})
    elif args.report == "events":
        rows = []
        for name, pair in analytics._REPORT_PAIRS.items():
            try:
                stats = analytics.per_event_stats(trace, pair)
            except Exception:
                continue
            rows.append({"pair": name, **stats})
    else:
        rows = [{"sched_tasks_per_s": analytics.scheduler_throughput(trace)}]
    for row in rows:
        print("  ".join(f"{k}={analytics._format_cell(v)}"
                        for k, v in row.items()))
    if out is not None:
        path = analytics.write_table(rows, out / f"{args.report}.csv")
        print(f"wrote {path}")
    return 0


def _cmd_bench(args) -> int:
    blocks = [int(b) for b in args.blocks.split(",") if b.strip()]
    out = Path(args.out)
    points = bench.run_scheduler_benchmark(
        block_counts=blocks, cores_per_task=args.cores_per_task, out_dir=out)
    rows = [p.row() for p in points]
    path = analytics.write_table(rows, out / "bench.csv")
    for row in rows:
        print(f"{row['kind']:<12} blocks={row['blocks']:>6} "
              f"median={row['median_us']:>10.2f}us "
              f"throughput={row['tasks_per_s']:>12.1f}/s")
    print(f"wrote {path}")
    return 0


def _cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.figure == "schedbench":
        rows = _read_csv(args.inputs[0])
        for row in rows:
            row["pilot_cores"] = int(row["pilot_cores"])
            row["median_us"] = float(row["median_us"])
        path = plots.plot_sched_bench(rows, out / "schedbench.png")
    elif args.figure == "utilization":
        rows = []
        for trace_path in args.inputs:
            trace = analytics.load_trace(trace_path)
            util = analytics.compute_utilization(trace)
            util["label"] = trace.meta.get("session", Path(trace_path).stem)
            rows.append(util)
        path = plots.plot_utilization(rows, out / "utilization.png")
    elif args.figure == "concurrency":
        trace = analytics.load_trace(args.inputs[0])
        path = plots.plot_concurrency(trace, out / "concurrency.png")
    else:
        trace = analytics.load_trace(args.inputs[0])
        path = plots.plot_events(trace, out / "events.png")
    print(f"wrote {path}")
    return 0


def _read_csv(path: str) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


if __name__ == "__main__":
    sys.exit(main())
