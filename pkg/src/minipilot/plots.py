"""Static figures from traces and benchmark results."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .analytics import STATE_INTERVALS, Trace, concurrency_series  # noqa: E402
from .profiler import CANONICAL_CHAIN  # noqa: E402

_SERIES_COLORS = {
    "scheduling": "tab:blue",
    "executor_queue": "tab:green",
    "executing": "tab:red",
    "unscheduling": "tab:purple",
}


def plot_utilization(rows: list[dict], out_path: str | Path) -> Path:
    """Stacked utilization bars, one per session row."""
    labels = [str(r.get("label", i)) for i, r in enumerate(rows)]
    workload = [r["workload_pct"] for r in rows]
    overhead = [r["overhead_pct"] for r in rows]
    idle = [r["idle_pct"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, len(rows) * 0.9), 4))
    ax.bar(labels, workload, label="workload", color="tab:red")
    ax.bar(labels, overhead, bottom=workload, label="runtime", color="tab:green")
    bottom = [w + o for w, o in zip(workload, overhead)]
    ax.bar(labels, idle, bottom=bottom, label="idle", color="tab:blue")
    ax.set_ylabel("% of pilot core-time")
    ax.legend()
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    return _save(fig, out_path)


def plot_concurrency(trace: Trace, out_path: str | Path,
                     intervals=None) -> Path:
    """Step plot of units in each pipeline stage over time."""
    intervals = intervals or STATE_INTERVALS
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, pair in intervals.items():
        series = concurrency_series(trace, pair)
        if not series:
            continue
        xs = [t for t, _ in series]
        ys = [c for _, c in series]
        ax.step(xs, ys, where="post", label=name,
                color=_SERIES_COLORS.get(name))
    ax.set_xlabel("time [s]")
    ax.set_ylabel("concurrent units")
    ax.legend()
    return _save(fig, out_path)


def plot_events(trace: Trace, out_path: str | Path) -> Path:
    """Scatter of per-unit event times against unit rank."""
    order = sorted(trace.per_unit,
                   key=lambda u: trace.per_unit[u].get("db_pull", 0.0))
    rank = {u: i for i, u in enumerate(order)}
    fig, ax = plt.subplots(figsize=(7, 4))
    for event in CANONICAL_CHAIN:
        xs, ys = [], []
        for uid, events in trace.per_unit.items():
            if event in events:
                xs.append(events[event])
                ys.append(rank[uid])
        if xs:
            ax.plot(xs, ys, ".", markersize=2, label=event)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("unit rank")
    ax.legend(markerscale=4, fontsize=8)
    return _save(fig, out_path)


def plot_sched_bench(rows: list[dict], out_path: str | Path) -> Path:
    """Median placement time per scheduler kind across pilot sizes."""
    fig, ax = plt.subplots(figsize=(6, 4))
    kinds = sorted({r["kind"] for r in rows})
    for kind in kinds:
        pts = sorted((r for r in rows if r["kind"] == kind),
                     key=lambda r: r["pilot_cores"])
        xs = [r["pilot_cores"] for r in pts]
        ys = [r["median_us"] for r in pts]
        ax.plot(xs, ys, "o-", label=kind)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("pilot cores")
    ax.set_ylabel("median time per placement [us]")
    ax.legend()
    return _save(fig, out_path)


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
