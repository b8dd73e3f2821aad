"""Metrics over unified traces: makespan, utilization, concurrency, rates.

All functions are pure over a loaded trace. Utilization partitions the
pilot's core-time into workload execution, runtime overhead (core-time held
by a unit but not executing its payload), and idle; the three shares close
to 100% by construction and a negative idle remainder is treated as an
accounting bug, not a result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (IncompleteTrace, MissingEvents, NegativeIdle,
                     TooFewEvents, UnknownEvent)
from .profiler import (CANONICAL_EVENTS, EVENT_DB_PULL, EVENT_EXEC_QUEUED,
                       EVENT_PAYLOAD_START, EVENT_PAYLOAD_STOP,
                       EVENT_SCHED_DONE, EVENT_SCHED_START,
                       EVENT_SPAWN_RETURN, EVENT_SYNC, EVENT_UNSCHED_DONE,
                       Row, check_unit_order, read_profile)

TERMINAL_EVENTS = ("state_done", "state_failed", "state_canceled")

# Named intervals used for concurrency plots: unit is "in" the interval
# between its first occurrence of each event.
STATE_INTERVALS = {
    "scheduling": (EVENT_DB_PULL, EVENT_SCHED_DONE),
    "executor_queue": (EVENT_EXEC_QUEUED, EVENT_PAYLOAD_START),
    "executing": (EVENT_PAYLOAD_START, EVENT_PAYLOAD_STOP),
    "unscheduling": (EVENT_SPAWN_RETURN, EVENT_UNSCHED_DONE),
}


class Trace:
    """A parsed profile: events plus per-unit first-occurrence times."""

    def __init__(self, rows: list[Row], meta: dict[str, str],
                 path: Path | None = None):
        self.rows = rows
        self.meta = meta
        self.path = path
        self.per_unit: dict[str, dict[str, float]] = {}
        self.unit_cores: dict[str, int] = {}
        self.unit_state: dict[str, str] = {}
        for row in rows:
            if not row.unit:
                continue
            events = self.per_unit.setdefault(row.unit, {})
            events.setdefault(row.event, row.time)
            if row.event == EVENT_DB_PULL and row.data.startswith("cores="):
                self.unit_cores[row.unit] = int(row.data[6:])
            if row.event.startswith("state_"):
                self.unit_state[row.unit] = row.event[6:]

    @property
    def units(self) -> list[str]:
        return list(self.per_unit)

    @property
    def pilot_cores(self) -> int | None:
        v = self.meta.get("pilot_cores")
        return int(v) if v is not None else None

    def times_of(self, event: str) -> list[float]:
        if event not in CANONICAL_EVENTS:
            raise UnknownEvent(f"unknown event {event!r}")
        return sorted(ev[event] for ev in self.per_unit.values()
                      if event in ev)


def load_trace(path: str | Path) -> Trace:
    """Read a unified (or single-component) profile file."""
    path = Path(path)
    meta: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                if key != "schema":
                    meta[key] = value
    rows = [r for r in read_profile(path) if r.event != EVENT_SYNC]
    rows.sort(key=lambda r: r.time)
    return Trace(rows, meta, path)


def check_event_order(trace: Trace) -> list[str]:
    """Canonical per-unit ordering violations; [] on a consistent trace."""
    return check_unit_order(trace.per_unit)


def generation_law(n_tasks: int, pilot_cores: int, cores_per_task: int) -> int:
    """Waves of fully concurrent execution for a homogeneous workload."""
    capacity = pilot_cores // cores_per_task
    if capacity < 1:
        raise IncompleteTrace("pilot cannot hold a single task")
    return math.ceil(n_tasks / capacity)


@dataclass(frozen=True)
class TtxSummary:
    ttx: float
    ideal_ttx: float
    generations: int | None
    mean_payload: float
    n_units: int

    @property
    def overhead_ratio(self) -> float:
        return self.ttx / self.ideal_ttx - 1.0 if self.ideal_ttx > 0 else 0.0


def compute_ttx(trace: Trace) -> TtxSummary:
    """Workload makespan: first pull to last completion acknowledgment.

    Also derives the ideal makespan (generations x mean payload duration),
    the floor an overhead-free runtime could reach.
    """
    non_terminal = [u for u in trace.per_unit
                    if trace.unit_state.get(u) not in
                    ("done", "failed", "canceled")]
    if non_terminal:
        raise IncompleteTrace(
            f"{len(non_terminal)} units not terminal; first: {non_terminal[0]}")
    pulls = trace.times_of(EVENT_DB_PULL)
    returns = trace.times_of(EVENT_SPAWN_RETURN)
    if not pulls or not returns:
        raise IncompleteTrace("trace lacks pull or completion events")
    ttx = max(returns) - min(pulls)
    durations = _payload_durations(trace)
    mean_payload = float(np.mean(durations)) if durations else 0.0
    generations = None
    cores = set(trace.unit_cores.values())
    if len(cores) == 1 and trace.pilot_cores:
        generations = generation_law(len(trace.per_unit), trace.pilot_cores,
                                     cores.pop())
    ideal = (generations or 1) * mean_payload
    return TtxSummary(ttx=ttx, ideal_ttx=ideal, generations=generations,
                      mean_payload=mean_payload, n_units=len(trace.per_unit))


def _payload_durations(trace: Trace) -> list[float]:
    out = []
    for events in trace.per_unit.values():
        if EVENT_PAYLOAD_START in events and EVENT_PAYLOAD_STOP in events:
            out.append(events[EVENT_PAYLOAD_STOP] - events[EVENT_PAYLOAD_START])
    return out


def compute_utilization(trace: Trace,
                        pilot_cores: int | None = None) -> dict[str, float]:
    """Partition pilot core-time into workload / overhead / idle shares.

    A unit holds its cores from placement until the scheduler processes the
    release; held-but-not-executing core-time is runtime overhead. Holding
    intervals are clamped to the trace window, and idle is the remainder,
    so the three shares always close to 100%.
    """
    pilot_cores = pilot_cores or trace.pilot_cores
    if not pilot_cores:
        raise IncompleteTrace("pilot core count unknown; pass pilot_cores")
    pulls = trace.times_of(EVENT_DB_PULL)
    if not pulls:
        raise IncompleteTrace("trace has no pull events")
    t0 = min(pulls)
    returns = trace.times_of(EVENT_SPAWN_RETURN)
    t1 = max(returns) if returns else max(r.time for r in trace.rows)
    window = t1 - t0
    if window <= 0:
        raise IncompleteTrace("empty trace window")
    total = pilot_cores * window
    workload = 0.0
    held = 0.0
    for uid, events in trace.per_unit.items():
        cores = trace.unit_cores.get(uid)
        if cores is None or EVENT_SCHED_DONE not in events:
            continue
        h0 = events[EVENT_SCHED_DONE]
        h1 = events.get(EVENT_UNSCHED_DONE, t1)
        h0, h1 = max(h0, t0), min(h1, t1)
        if h1 <= h0:
            continue
        held += cores * (h1 - h0)
        p0 = events.get(EVENT_PAYLOAD_START)
        if p0 is not None:
            p1 = events.get(EVENT_PAYLOAD_STOP, h1)
            p0, p1 = max(p0, h0), min(p1, h1)
            if p1 > p0:
                workload += cores * (p1 - p0)
    overhead = held - workload
    idle = total - held
    if idle < -1e-6 * total:
        raise NegativeIdle(
            f"idle core-time {idle:.6f} < 0 (held {held:.6f} of {total:.6f})")
    idle = max(idle, 0.0)
    return {
        "workload_pct": 100.0 * workload / total,
        "overhead_pct": 100.0 * overhead / total,
        "idle_pct": 100.0 * idle / total,
        "workload_core_s": workload,
        "overhead_core_s": overhead,
        "idle_core_s": idle,
        "window_s": window,
        "pilot_cores": float(pilot_cores),
    }


def concurrency_series(trace: Trace,
                       state_interval: tuple[str, str]) -> list[tuple[float, int]]:
    """Step function counting units between two lifecycle events."""
    start_event, end_event = state_interval
    for name in (start_event, end_event):
        if name not in CANONICAL_EVENTS:
            raise UnknownEvent(f"unknown event {name!r}")
    deltas: list[tuple[float, int]] = []
    for events in trace.per_unit.values():
        if start_event in events:
            deltas.append((events[start_event], 1))
            if end_event in events:
                deltas.append((events[end_event], -1))
    deltas.sort(key=lambda d: (d[0], -d[1]))
    series: list[tuple[float, int]] = []
    level = 0
    for t, d in deltas:
        level += d
        if series and series[-1][0] == t:
            series[-1] = (t, level)
        else:
            series.append((t, level))
    return series


def max_concurrency(series: list[tuple[float, int]]) -> int:
    return max((count for _, count in series), default=0)


def series_integral(series: list[tuple[float, int]]) -> float:
    total = 0.0
    for (t0, level), (t1, _) in zip(series, series[1:]):
        total += level * (t1 - t0)
    return total


def per_event_stats(trace: Trace,
                    pair: tuple[str, str]) -> dict[str, float]:
    """Duration statistics between two events, across units having both."""
    a, b = pair
    for name in (a, b):
        if name not in CANONICAL_EVENTS:
            raise UnknownEvent(f"unknown event {name!r}")
    durations = [events[b] - events[a] for events in trace.per_unit.values()
                 if a in events and b in events]
    if not durations:
        raise MissingEvents(f"no unit carries both {a} and {b}")
    arr = np.asarray(durations)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "median": float(np.median(arr)),
        "p95": float(np.percentile(arr, 95)),
        "n": len(durations),
    }


def scheduler_throughput(trace: Trace) -> float:
    """Placements per second over the span of all placement events."""
    done = trace.times_of(EVENT_SCHED_DONE)
    if len(done) < 2:
        raise TooFewEvents("need at least two scheduled units")
    span = done[-1] - done[0]
    if span <= 0:
        return math.inf
    return len(done) / span


@dataclass
class TraceReport:
    """Bundle of the standard metrics for one trace."""

    ttx: float
    ideal_ttx: float
    generations: int | None
    utilization: dict[str, float]
    per_event_stats: dict[str, dict[str, float]]
    concurrency: dict[str, list[tuple[float, int]]]
    max_executing: int
    throughput: float | None
    n_units: int

    @property
    def overhead_ratio(self) -> float:
        return self.ttx / self.ideal_ttx - 1.0 if self.ideal_ttx > 0 else 0.0


_REPORT_PAIRS = {
    "scheduling": (EVENT_DB_PULL, EVENT_SCHED_DONE),
    "placement": (EVENT_SCHED_START, EVENT_SCHED_DONE),
    "launch_prepare": (EVENT_EXEC_QUEUED, EVENT_PAYLOAD_START),
    "payload": (EVENT_PAYLOAD_START, EVENT_PAYLOAD_STOP),
    "completion_ack": (EVENT_PAYLOAD_STOP, EVENT_SPAWN_RETURN),
}


def build_report(trace: Trace,
                 pilot_cores: int | None = None) -> TraceReport:
    ttx = compute_ttx(trace)
    utilization = compute_utilization(trace, pilot_cores)
    stats = {}
    for name, pair in _REPORT_PAIRS.items():
        try:
            stats[name] = per_event_stats(trace, pair)
        except MissingEvents:
            pass
    concurrency = {name: concurrency_series(trace, pair)
                   for name, pair in STATE_INTERVALS.items()}
    try:
        throughput = scheduler_throughput(trace)
    except TooFewEvents:
        throughput = None
    return TraceReport(
        ttx=ttx.ttx, ideal_ttx=ttx.ideal_ttx, generations=ttx.generations,
        utilization=utilization, per_event_stats=stats,
        concurrency=concurrency,
        max_executing=max_concurrency(concurrency["executing"]),
        throughput=throughput, n_units=ttx.n_units)


def write_table(rows: list[dict], path: str | Path) -> Path:
    """Write dict rows as a delimiter-separated table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    cols = list(rows[0])
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_format_cell(row.get(c)) for c in cols))
    path.write_text("\n".join(lines) + "\n")
    return path


def _format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)
