"""Timestamped lifecycle event recording with buffered writes.

Each worker owns one profiler writing one file; a merge step rebases every
file onto a shared reference clock and checks that the per-unit event order
survived. The file format is one event per line, comma separated, with a
schema header; reference-clock samples taken at open and close time travel
inside the file as ``sync_ref`` rows.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

from .errors import InconsistentTrace, MissingSyncPoint

SCHEMA_VERSION = 1
HEADER = "time,event,comp,worker,unit,pilot,data"

# Lifecycle events, in canonical per-unit order.
EVENT_DB_PULL = "db_pull"
EVENT_SCHED_START = "sched_start"
EVENT_SCHED_DONE = "sched_done"
EVENT_EXEC_QUEUED = "exec_queued"
EVENT_EXEC_START = "exec_start"
EVENT_PAYLOAD_START = "payload_start"
EVENT_PAYLOAD_STOP = "payload_stop"
EVENT_SPAWN_RETURN = "spawn_return"
EVENT_UNSCHED_DONE = "unsched_done"
EVENT_SYNC = "sync_ref"

CANONICAL_CHAIN = (
    EVENT_DB_PULL,
    EVENT_SCHED_START,
    EVENT_SCHED_DONE,
    EVENT_EXEC_QUEUED,
    EVENT_EXEC_START,
    EVENT_PAYLOAD_START,
    EVENT_PAYLOAD_STOP,
    EVENT_SPAWN_RETURN,
    EVENT_UNSCHED_DONE,
)

_STATE_EVENTS = tuple(
    f"state_{s}" for s in ("new", "pending_schedule", "scheduled",
                           "pending_execution", "executing", "done",
                           "failed", "canceled"))

CANONICAL_EVENTS = frozenset(CANONICAL_CHAIN) | frozenset(_STATE_EVENTS) | {
    EVENT_SYNC, "calibration"}


class Row(NamedTuple):
    time: float
    event: str
    comp: str
    worker: str
    unit: str
    pilot: str
    data: str


@dataclass(frozen=True)
class ProfileEvent:
    """One recorded lifecycle event."""

    timestamp: float
    event_name: str
    component_id: str
    worker_id: str = "0"
    unit_id: str = ""
    pilot_id: str = ""
    data: str = ""


@dataclass(frozen=True)
class ClockOffset:
    """Linear map from one component's clock to the reference clock."""

    component_id: str
    local_start: float
    ref_start: float
    local_end: float
    ref_end: float

    def apply(self, t: float) -> float:
        span = self.local_end - self.local_start
        if span <= 0.0:
            return self.ref_start + (t - self.local_start)
        drift = (self.ref_end - self.ref_start) / span
        return self.ref_start + (t - self.local_start) * drift


class Profiler:
    """Buffered, per-worker event recorder.

    record() appends to a private in-memory buffer; the buffer hits disk at
    a size threshold and on close, so the caller pays a list append per
    event. A disabled profiler turns every call into a no-op.
    """

    def __init__(self, path: str | Path | None, component: str,
                 worker: str = "0", enabled: bool = True,
                 clock: Callable[[], float] = time.perf_counter,
                 flush_every: int = 8192):
        self.component = component
        self.worker = worker
        self.enabled = enabled and path is not None
        self.clock = clock
        self.path = Path(path) if path is not None else None
        self._buffer: list[str] = []
        self._flush_every = flush_every
        self._lock = threading.Lock()
        self._fh = None
        self._rows = 0
        if self.enabled:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="\n")
            self._fh.write(f"#schema={SCHEMA_VERSION}\n{HEADER}\n")

    @property
    def rows_recorded(self) -> int:
        return self._rows

    def record(self, event: str, t: float | None = None, *, unit: str = "",
               pilot: str = "", data: str = "") -> None:
        if not self.enabled:
            return
        if t is None:
            t = self.clock()
        with self._lock:
            self._buffer.append(
                f"{t:.7f},{event},{self.component},{self.worker},"
                f"{unit},{pilot},{data}")
            self._rows += 1
            if len(self._buffer) >= self._flush_every:
                self._flush_locked()

    def sync_point(self, ref_time: float | None = None) -> None:
        """Record a (local clock, reference clock) sample pair."""
        if not self.enabled:
            return
        local = self.clock()
        if ref_time is None:
            ref_time = time.time()
        self.record(EVENT_SYNC, local, data=f"{ref_time:.7f}")

    def flush(self) -> None:
        with self._lock:
            self._flush_locked()

    def _flush_locked(self) -> None:
        if self._fh is not None and self._buffer:
            self._fh.write("\n".join(self._buffer) + "\n")
            self._fh.flush()
            self._buffer.clear()

    def close(self) -> None:
        if self._fh is None:
            return
        with self._lock:
            self._flush_locked()
            self._fh.close()
            self._fh = None


def read_profile(path: str | Path) -> list[Row]:
    """Parse one profile file into rows (sync rows included)."""
    rows: list[Row] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#") or line == HEADER:
                continue
            fields = line.split(",", 6)
            if len(fields) != 7:
                continue
            rows.append(Row(float(fields[0]), fields[1], fields[2],
                            fields[3], fields[4], fields[5], fields[6]))
    return rows


def _offset_for(path: Path, rows: list[Row]) -> ClockOffset:
    syncs = [r for r in rows if r.event == EVENT_SYNC]
    if len(syncs) < 2:
        raise MissingSyncPoint(
            f"{path}: needs start and end reference-clock samples, "
            f"found {len(syncs)}")
    first, last = syncs[0], syncs[-1]
    return ClockOffset(component_id=first.comp,
                       local_start=first.time, ref_start=float(first.data),
                       local_end=last.time, ref_end=float(last.data))


def check_unit_order(per_unit: dict[str, dict[str, float]]) -> list[str]:
    """Violations of the canonical per-unit event order, as messages."""
    violations = []
    for uid, events in per_unit.items():
        present = [(name, events[name]) for name in CANONICAL_CHAIN
                   if name in events]
        for (ea, ta), (eb, tb) in zip(present, present[1:]):
            if tb < ta:
                violations.append(
                    f"{uid}: {eb}@{tb:.7f} precedes {ea}@{ta:.7f}")
    return violations


def synchronize(profile_paths: Iterable[str | Path], out_path: str | Path,
                meta: dict[str, str] | None = None) -> Path:
    """Merge per-component profiles into one reference-clock trace.

    Every input file must carry its two sync samples; timestamps are
    rebased by linear interpolation between them. The merged trace is
    rejected if any unit's event order came out violated.
    """
    merged: list[tuple[float, int, Row]] = []
    seq = 0
    for p in sorted(str(p) for p in profile_paths):
        path = Path(p)
        rows = read_profile(path)
        offset = _offset_for(path, rows)
        for row in rows:
            if row.event == EVENT_SYNC:
                continue
            merged.append((offset.apply(row.time), seq, row))
            seq += 1
    merged.sort(key=lambda item: (item[0], item[1]))

    per_unit: dict[str, dict[str, float]] = {}
    for t, _, row in merged:
        if row.unit and row.event in CANONICAL_CHAIN:
            per_unit.setdefault(row.unit, {}).setdefault(row.event, t)
    violations = check_unit_order(per_unit)
    if violations:
        raise InconsistentTrace(
            f"{len(violations)} ordering violations after sync; first: "
            f"{violations[0]}")

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as fh:
        fh.write(f"#schema={SCHEMA_VERSION}\n")
        for key, value in (meta or {}).items():
            fh.write(f"#{key}={value}\n")
        fh.write(HEADER + "\n")
        for t, _, row in merged:
            fh.write(f"{t:.7f},{row.event},{row.comp},{row.worker},"
                     f"{row.unit},{row.pilot},{row.data}\n")
    return out
