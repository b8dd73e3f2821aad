"""Agent runtime: wires store, scheduler, executors, and profiler together.

A session binds a workload to a pilot and runs it to completion on one of
two backends. The real backend runs components as threads communicating
over bounded FIFO channels, spawning actual child processes. The virtual
backend runs the same pipeline cooperatively against a single discrete
event clock, which makes large workloads cheap to replay and, given a seed,
bit-for-bit reproducible.
"""

from __future__ import annotations

import heapq
import json
import shutil
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import executor as ex
from .emulator import (FLOP_BURN, TaskPayload, calibrate_burn_rate,
                       sample_duration)
from .errors import ChannelClosed, InvalidDescription, LostChild, SpawnFailure, UnitTooLarge
from .model import (Backend, ComputeUnit, PilotDescription, TERMINAL_STATES,
                    UnitDescription, UnitState, transition, validate_pilot)
from .profiler import (EVENT_DB_PULL, EVENT_EXEC_QUEUED, EVENT_EXEC_START,
                       EVENT_PAYLOAD_START, EVENT_PAYLOAD_STOP,
                       EVENT_SCHED_DONE, EVENT_SCHED_START,
                       EVENT_SPAWN_RETURN, EVENT_UNSCHED_DONE, Profiler,
                       synchronize)
from .scheduler import HOMOGENEOUS, make_scheduler

_NOTHING = object()

IN_MEMORY = "in_memory"
FILE_BACKED = "file_backed"


class Channel:
    """Bounded, ordered, lossless FIFO between two workers.

    send() blocks while the channel is full (backpressure, never a silent
    drop); receive() blocks while it is empty. After close(), sends raise
    ChannelClosed immediately and receives drain what is left before
    raising it too.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidDescription("channel capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque()
        self._closed = False
        self._cond = threading.Condition()

    def send(self, item) -> None:
        with self._cond:
            while len(self._items) >= self.capacity and not self._closed:
                self._cond.wait()
            if self._closed:
                raise ChannelClosed("send on closed channel")
            self._items.append(item)
            self._cond.notify_all()

    def receive(self):
        with self._cond:
            while not self._items and not self._closed:
                self._cond.wait()
            if self._items:
                item = self._items.popleft()
                self._cond.notify_all()
                return item
            raise ChannelClosed("channel drained and closed")

    def try_receive(self):
        """Nonblocking receive; returns the module sentinel when empty."""
        with self._cond:
            if self._items:
                item = self._items.popleft()
                self._cond.notify_all()
                return item
            return _NOTHING

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


class WorkloadStore:
    """Holds pending unit descriptions and hands them out exactly once.

    Delivery order is insertion order; pulls remove up to a batch of units
    at a time and stamp one pull event per unit, so a bulk pull shows up in
    the trace as a burst of near-identical timestamps.
    """

    def __init__(self, units, backing: str = IN_MEMORY,
                 path: str | Path | None = None):
        if backing not in (IN_MEMORY, FILE_BACKED):
            raise InvalidDescription(f"unknown store backing {backing!r}")
        self.backing = backing
        self.path = Path(path) if path else None
        self._pending: deque[UnitDescription] = deque(units)
        self._profiler: Profiler | None = None
        self._clock = None
        self._pilot_id = ""

    @classmethod
    def from_file(cls, path: str | Path) -> "WorkloadStore":
        units = load_workload(path)
        return cls(units, backing=FILE_BACKED, path=path)

    def attach(self, profiler: Profiler, clock, pilot_id: str = "") -> None:
        self._profiler = profiler
        self._clock = clock
        self._pilot_id = pilot_id

    def pull(self, batch: int) -> list[UnitDescription]:
        """Remove and return up to ``batch`` units; [] once drained."""
        if batch < 1:
            raise InvalidDescription("pull batch must be >= 1")
        out = []
        now = self._clock() if self._clock else 0.0
        while self._pending and len(out) < batch:
            unit = self._pending.popleft()
            out.append(unit)
            if self._profiler is not None:
                self._profiler.record(EVENT_DB_PULL, now, unit=unit.unit_id,
                                      pilot=self._pilot_id,
                                      data=f"cores={unit.cores}")
        return out

    def __len__(self) -> int:
        return len(self._pending)


def unit_to_dict(u: UnitDescription) -> dict:
    return {
        "unit_id": u.unit_id,
        "cores": u.cores,
        "payload": {
            "kind": u.payload.kind,
            "target_duration": u.payload.target_duration,
            "jitter_sigma": u.payload.jitter_sigma,
            "flop_count": u.payload.flop_count,
            "command": list(u.payload.command),
        },
        "stage_in": list(u.stage_in),
        "stage_out": list(u.stage_out),
    }


def unit_from_dict(d: dict) -> UnitDescription:
    p = d.get("payload", {})
    payload = TaskPayload(kind=p.get("kind", "sleep"),
                          target_duration=p.get("target_duration", 1.0),
                          jitter_sigma=p.get("jitter_sigma", 0.0),
                          flop_count=p.get("flop_count", 0),
                          command=tuple(p.get("command", ())))
    return UnitDescription(unit_id=d["unit_id"], cores=d["cores"],
                           payload=payload,
                           stage_in=tuple(d.get("stage_in", ())),
                           stage_out=tuple(d.get("stage_out", ())))


def save_workload(units, path: str | Path) -> Path:
    """Write units as JSON lines, the on-disk workload interchange format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        for u in units:
            fh.write(json.dumps(unit_to_dict(u), sort_keys=True) + "\n")
    return path


def load_workload(path: str | Path) -> list[UnitDescription]:
    units = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                units.append(unit_from_dict(json.loads(line)))
    return units


@dataclass
class Session:
    """Everything needed to run one workload on one pilot."""

    session_id: str
    pilot: PilotDescription
    units: list[UnitDescription]
    scheduler_kind: str = "continuous"
    sched_base_cost: float = 0.0
    sched_visit_cost: float = 0.0
    latency: ex.LatencyModel = field(default_factory=ex.LatencyModel.zero)
    n_executors: int = 4
    pull_batch: int = 0  # 0 means everything in one bulk pull
    launch_method: str | None = None
    profile: bool = True
    out_dir: Path = Path("out")
    seed: int = 0

    def validate(self) -> None:
        self.pilot.validate()
        if self.n_executors < 1:
            raise InvalidDescription("session needs at least one executor")
        ids = [u.unit_id for u in self.units]
        if len(set(ids)) != len(ids):
            raise InvalidDescription("unit ids must be unique within a session")
        if self.scheduler_kind == HOMOGENEOUS and self.units:
            sizes = {u.cores for u in self.units}
            if len(sizes) != 1:
                raise InvalidDescription(
                    "homogeneous scheduler requires uniform unit core counts")
        method = self.launch_method or ex.default_method(self.pilot.backend)
        ex.check_method(method, self.pilot.backend)

    @property
    def session_dir(self) -> Path:
        return Path(self.out_dir) / self.session_id


@dataclass
class SessionResult:
    session_id: str
    session_dir: Path
    trace_path: Path
    states: dict[str, str]
    aborted: bool
    wall_seconds: float

    @property
    def clean(self) -> bool:
        return not self.aborted and all(s == UnitState.DONE.value
                                        for s in self.states.values())


def run_session(session: Session) -> SessionResult:
    """Run a session to completion and return the unified trace location.

    Every unit ends in a terminal state; on walltime expiry the leftovers
    are marked canceled and the trace is still complete and consistent.
    """
    session.validate()
    wall0 = time.perf_counter()
    if session.pilot.backend is Backend.VIRTUAL:
        agent = _VirtualAgent(session)
    else:
        agent = _RealAgent(session)
    trace_path, aborted = agent.run()
    states = {u.uid: u.state.value for u in agent.units.values()}
    return SessionResult(session_id=session.session_id,
                         session_dir=session.session_dir,
                         trace_path=trace_path, states=states,
                         aborted=aborted,
                         wall_seconds=time.perf_counter() - wall0)


class _AgentBase:
    """State shared by both backends: profilers, model, unit table."""

    def __init__(self, session: Session):
        self.session = session
        self.pilot = session.pilot
        self.pilot_id = f"{session.session_id}.pilot"
        self.model = validate_pilot(self.pilot)
        self.scheduler = make_scheduler(
            session.scheduler_kind, self.model,
            block_size=(session.units[0].cores
                        if session.scheduler_kind == HOMOGENEOUS
                        and session.units else None),
            base_cost=session.sched_base_cost,
            visit_cost=session.sched_visit_cost)
        self.units: dict[str, ComputeUnit] = {
            u.unit_id: ComputeUnit(u) for u in session.units}
        self.unit_index = {u.unit_id: i for i, u in enumerate(session.units)}
        self.store = WorkloadStore(session.units)
        self.method = (session.launch_method
                       or ex.default_method(self.pilot.backend))
        self.session_dir = session.session_dir
        self.session_dir.mkdir(parents=True, exist_ok=True)
        self.profilers: dict[str, Profiler] = {}

    def _profiler(self, component: str, worker: str, clock) -> Profiler:
        path = (self.session_dir / f"{component}.prof"
                if self.session.profile else None)
        prof = Profiler(path, component, worker, enabled=self.session.profile,
                        clock=clock)
        self.profilers[component] = prof
        return prof

    def _unit_rng(self, unit: ComputeUnit) -> np.random.Generator:
        # Keyed by (seed, insertion index): the sample stream of one unit
        # never depends on scheduling order or worker count.
        return np.random.default_rng(
            [self.session.seed, self.unit_index[unit.uid]])

    def _meta(self) -> dict[str, str]:
        return {
            "session": self.session.session_id,
            "pilot_cores": str(self.pilot.total_cores),
            "node_count": str(self.pilot.node_count),
            "cores_per_node": str(self.pilot.cores_per_node),
            "backend": self.pilot.backend.value,
            "scheduler": self.session.scheduler_kind,
            "n_units": str(len(self.session.units)),
            "seed": str(self.session.seed),
        }

    def _finalize_trace(self) -> Path:
        # Both agents record their own start/end sync points; here we only
        # close the files and merge them.
        for prof in self.profilers.values():
            prof.close()
        unified = self.session_dir / "unified.prof"
        if self.session.profile:
            paths = [p.path for p in self.profilers.values()
                     if p.path is not None]
            synchronize(paths, unified, meta=self._meta())
        return unified


class _VirtualAgent(_AgentBase):
    """Cooperative discrete-event execution of the whole pipeline.

    One logical clock orders everything; scheduler service time and launch
    latencies are modeled, payload durations are sampled, and no wall time
    is spent waiting. Executor workers are logical: spawning never blocks
    them, so worker count does not change the schedule.
    """

    def __init__(self, session: Session):
        super().__init__(session)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        clock = lambda: self.now  # noqa: E731
        self.p_store = self._profiler("store", "0", clock)
        self.p_sched = self._profiler("scheduler", "0", clock)
        self.p_exec = [self._profiler(f"executor-{i}", str(i), clock)
                       for i in range(session.n_executors)]
        self.store.attach(self.p_store, clock, self.pilot_id)
        self._sched_q: deque[ComputeUnit] = deque()
        self._free_q: deque = deque()
        self._sched_busy = False
        self._dispatched = 0
        self._aborted = False

    def _at(self, t: float, fn) -> None:
        heapq.heappush(self._heap, (t, self._seq, fn))
        self._seq += 1

    def run(self) -> tuple[Path, bool]:
        for prof in self.profilers.values():
            prof.sync_point(ref_time=self.now)
        self._at(0.0, self._pull_all)
        walltime = self.pilot.walltime
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            if t > walltime:
                self._cancel_remaining(walltime)
                break
            self.now = t
            fn()
        for prof in self.profilers.values():
            prof.sync_point(ref_time=self.now)
        return self._finalize_trace(), self._aborted

    def _pull_all(self) -> None:
        batch = self.session.pull_batch or max(1, len(self.store))
        while len(self.store):
            for desc in self.store.pull(batch):
                unit = self.units[desc.unit_id]
                transition(unit, UnitState.PENDING_SCHEDULE, self.now,
                           self.p_store, self.pilot_id)
                self._sched_q.append(unit)
        self._sched_kick()

    def _sched_kick(self) -> None:
        if not self._sched_busy:
            self._sched_cycle()

    def _sched_cycle(self) -> None:
        t = self.now
        while True:
            while self._free_q:
                alloc = self._free_q.popleft()
                self.scheduler.unschedule(alloc)
                self.p_sched.record(EVENT_UNSCHED_DONE, t, unit=alloc.unit_id,
                                    pilot=self.pilot_id)
            if not self._sched_q:
                self._sched_busy = False
                return
            unit = self._sched_q[0]
            if not unit.sched_started:
                unit.sched_started = True
                self.p_sched.record(EVENT_SCHED_START, t, unit=unit.uid,
                                    pilot=self.pilot_id)
            try:
                alloc = self.scheduler.schedule(unit.description)
            except UnitTooLarge:
                self._sched_q.popleft()
                transition(unit, UnitState.FAILED, t, self.p_sched,
                           self.pilot_id)
                continue
            if alloc is None:
                # Head-of-line blocking: wait for the next free notification.
                self._sched_busy = False
                return
            self._sched_q.popleft()
            service = self.scheduler.service_time(self.scheduler.last_visits)
            self._sched_busy = True
            self._at(t + service, lambda u=unit, a=alloc: self._place(u, a))
            return

    def _place(self, unit: ComputeUnit, alloc) -> None:
        t = self.now
        unit.allocation = alloc
        self.p_sched.record(EVENT_SCHED_DONE, t, unit=unit.uid,
                            pilot=self.pilot_id)
        transition(unit, UnitState.SCHEDULED, t, self.p_sched, self.pilot_id)
        self.p_sched.record(EVENT_EXEC_QUEUED, t, unit=unit.uid,
                            pilot=self.pilot_id)
        transition(unit, UnitState.PENDING_EXECUTION, t, self.p_sched,
                   self.pilot_id)
        self._dispatch(unit, alloc, t)
        self._sched_cycle()

    def _dispatch(self, unit: ComputeUnit, alloc, t: float) -> None:
        prof = self.p_exec[self._dispatched % len(self.p_exec)]
        self._dispatched += 1
        rng = self._unit_rng(unit)
        duration = sample_duration(unit.description.payload, rng)
        prepare = self.session.latency.sample_prepare(rng)
        ack = self.session.latency.sample_ack(rng, self.pilot.total_cores)
        unit.sampled_duration = duration
        prof.record(EVENT_EXEC_START, t, unit=unit.uid, pilot=self.pilot_id)
        t_start = t + prepare
        t_stop = t_start + duration
        t_ret = t_stop + ack

        def on_start(u=unit, p=prof):
            p.record(EVENT_PAYLOAD_START, self.now, unit=u.uid,
                     pilot=self.pilot_id)
            transition(u, UnitState.EXECUTING, self.now, p, self.pilot_id)

        def on_stop(u=unit, p=prof):
            p.record(EVENT_PAYLOAD_STOP, self.now, unit=u.uid,
                     pilot=self.pilot_id)

        def on_return(u=unit, a=alloc, p=prof):
            p.record(EVENT_SPAWN_RETURN, self.now, unit=u.uid,
                     pilot=self.pilot_id, data="exit=0")
            u.exit_code = 0
            transition(u, UnitState.DONE, self.now, p, self.pilot_id)
            self._free_q.append(a)
            self._sched_kick()

        self._at(t_start, on_start)
        self._at(t_stop, on_stop)
        self._at(t_ret, on_return)

    def _cancel_remaining(self, walltime: float) -> None:
        self._aborted = True
        self.now = walltime
        self._heap.clear()
        while self._free_q:
            alloc = self._free_q.popleft()
            self.scheduler.unschedule(alloc)
            self.p_sched.record(EVENT_UNSCHED_DONE, walltime,
                                unit=alloc.unit_id, pilot=self.pilot_id)
        for unit in self.units.values():
            if unit.state in TERMINAL_STATES:
                continue
            if unit.allocation is not None:
                self.scheduler.unschedule(unit.allocation)
                self.p_sched.record(EVENT_UNSCHED_DONE, walltime,
                                    unit=unit.uid, pilot=self.pilot_id)
            transition(unit, UnitState.CANCELED, walltime, self.p_sched,
                       self.pilot_id)


class _RealAgent(_AgentBase):
    """Threaded execution with real child processes.

    One scheduler worker, n executor workers, per-unit runner threads that
    own the child handles. Completion notifications flow back to the
    scheduler over a FIFO; slots are released only when the scheduler
    processes them.
    """

    def __init__(self, session: Session):
        super().__init__(session)
        clock = time.perf_counter
        self.p_store = self._profiler("store", "0", clock)
        self.p_sched = self._profiler("scheduler", "0", clock)
        self.p_exec = [self._profiler(f"executor-{i}", str(i), clock)
                       for i in range(session.n_executors)]
        self.store.attach(self.p_store, clock, self.pilot_id)
        capacity = self._channel_capacity()
        self.unit_ch = Channel(max(capacity, len(session.units) + 1))
        self.exec_ch = Channel(capacity)
        self.free_ch = Channel(capacity)
        self.activity = threading.Event()
        self.stop = threading.Event()
        self.done = threading.Event()
        self._terminal = 0
        self._terminal_lock = threading.Lock()
        self._runners: list[threading.Thread] = []
        self._runner_lock = threading.Lock()
        self._live_handles: dict[str, ex.LaunchHandle] = {}
        self._handle_lock = threading.Lock()
        self._burn_rate: float | None = None
        self._aborted = False

    def _channel_capacity(self) -> int:
        # Twice the pilot's task capacity: bulk pulls never stall in a
        # single-generation run.
        cores = max(1, min(u.cores for u in self.session.units)) \
            if self.session.units else 1
        return max(2, 2 * max(1, self.pilot.total_cores // cores))

    def run(self) -> tuple[Path, bool]:
        for prof in self.profilers.values():
            prof.sync_point()
        if any(u.payload.kind == FLOP_BURN for u in self.session.units):
            self._burn_rate = calibrate_burn_rate()
            self.p_store.record("calibration", pilot=self.pilot_id,
                                data=f"chunks_per_s={self._burn_rate:.1f}")
        sched_thread = threading.Thread(target=self._scheduler_loop,
                                        name="scheduler", daemon=True)
        workers = [threading.Thread(target=self._worker, args=(i,),
                                    name=f"executor-{i}", daemon=True)
                   for i in range(self.session.n_executors)]
        sched_thread.start()
        for w in workers:
            w.start()

        batch = self.session.pull_batch or max(1, len(self.store))
        while len(self.store):
            for desc in self.store.pull(batch):
                unit = self.units[desc.unit_id]
                transition(unit, UnitState.PENDING_SCHEDULE,
                           self.p_store.clock(), self.p_store, self.pilot_id)
                self.unit_ch.send(unit)
        self.unit_ch.close()
        self.activity.set()

        finished = self.done.wait(timeout=self.pilot.walltime)
        if not finished:
            self._abort()
        else:
            # Let the scheduler drain the last free notifications so every
            # allocation gets its release event.
            deadline = time.perf_counter() + 30.0
            while (self.scheduler.live_allocations() > 0
                   and time.perf_counter() < deadline):
                self.activity.set()
                time.sleep(0.005)
        self.stop.set()
        self.activity.set()
        self.exec_ch.close()
        with self._runner_lock:
            runners = list(self._runners)
        for r in runners:
            r.join(timeout=10.0)
        for w in workers:
            w.join(timeout=10.0)
        sched_thread.join(timeout=10.0)
        if not finished:
            self._cancel_leftovers()
        for prof in self.profilers.values():
            prof.sync_point()
        return self._finalize_trace(), self._aborted

    # -- scheduler worker ---------------------------------------------------

    def _scheduler_loop(self) -> None:
        pending: deque[ComputeUnit] = deque()
        units_open = True
        while True:
            self.activity.wait(0.02)
            self.activity.clear()
            while True:
                alloc = self.free_ch.try_receive()
                if alloc is _NOTHING:
                    break
                self.scheduler.unschedule(alloc)
                self.p_sched.record(EVENT_UNSCHED_DONE, unit=alloc.unit_id,
                                    pilot=self.pilot_id)
            if units_open:
                while True:
                    item = self.unit_ch.try_receive()
                    if item is _NOTHING:
                        break
                    pending.append(item)
            while pending and not self.stop.is_set():
                unit = pending[0]
                if not unit.sched_started:
                    unit.sched_started = True
                    self.p_sched.record(EVENT_SCHED_START, unit=unit.uid,
                                        pilot=self.pilot_id)
                try:
                    alloc = self.scheduler.schedule(unit.description)
                except UnitTooLarge:
                    pending.popleft()
                    transition(unit, UnitState.FAILED, self.p_sched.clock(),
                               self.p_sched, self.pilot_id)
                    self._bump_terminal()
                    continue
                if alloc is None:
                    break
                pending.popleft()
                unit.allocation = alloc
                now = self.p_sched.clock()
                self.p_sched.record(EVENT_SCHED_DONE, now, unit=unit.uid,
                                    pilot=self.pilot_id)
                transition(unit, UnitState.SCHEDULED, now, self.p_sched,
                           self.pilot_id)
                self.p_sched.record(EVENT_EXEC_QUEUED, now, unit=unit.uid,
                                    pilot=self.pilot_id)
                transition(unit, UnitState.PENDING_EXECUTION, now,
                           self.p_sched, self.pilot_id)
                try:
                    self.exec_ch.send((unit, alloc))
                except ChannelClosed:
                    return
            if self.stop.is_set():
                return

    # -- executor workers ---------------------------------------------------

    def _worker(self, idx: int) -> None:
        prof = self.p_exec[idx]
        while True:
            try:
                unit, alloc = self.exec_ch.receive()
            except ChannelClosed:
                return
            prof.record(EVENT_EXEC_START, unit=unit.uid, pilot=self.pilot_id)
            runner = threading.Thread(target=self._run_unit,
                                      args=(unit, alloc, prof),
                                      name=f"runner-{unit.uid}", daemon=True)
            with self._runner_lock:
                self._runners.append(runner)
            runner.start()

    def _run_unit(self, unit: ComputeUnit, alloc, prof: Profiler) -> None:
        rng = self._unit_rng(unit)
        duration = sample_duration(unit.description.payload, rng)
        prepare = self.session.latency.sample_prepare(rng)
        ack = self.session.latency.sample_ack(rng, self.pilot.total_cores)
        unit.sampled_duration = duration
        if prepare > 0 and self.stop.wait(prepare):
            return
        try:
            self._stage_in(unit)
            cmd = ex.build_launch_command(
                unit.description, alloc, self.method,
                self.session_dir / "units", duration, self._burn_rate)
            handle = ex.spawn(unit.description, cmd)
        except (SpawnFailure, OSError):
            self._finish(unit, alloc, prof, UnitState.FAILED, None)
            return
        with self._handle_lock:
            self._live_handles[unit.uid] = handle
        now = prof.clock()
        prof.record(EVENT_PAYLOAD_START, now, unit=unit.uid,
                    pilot=self.pilot_id)
        transition(unit, UnitState.EXECUTING, now, prof, self.pilot_id)
        try:
            code = handle.wait()
        except LostChild:
            code = None
        prof.record(EVENT_PAYLOAD_STOP, unit=unit.uid, pilot=self.pilot_id)
        with self._handle_lock:
            self._live_handles.pop(unit.uid, None)
        if code == 0:
            self._stage_out(unit)
        if ack > 0:
            self.stop.wait(ack)
        prof.record(EVENT_SPAWN_RETURN, unit=unit.uid, pilot=self.pilot_id,
                    data=f"exit={code if code is not None else 'lost'}")
        state = UnitState.DONE if code == 0 else UnitState.FAILED
        if self.stop.is_set() and code is not None and code < 0:
            state = UnitState.CANCELED  # terminated during shutdown
        self._finish(unit, alloc, prof, state, code)

    def _finish(self, unit: ComputeUnit, alloc, prof: Profiler,
                state: UnitState, code: int | None) -> None:
        unit.exit_code = code
        transition(unit, state, prof.clock(), prof, self.pilot_id)
        try:
            self.free_ch.send(alloc)
        except ChannelClosed:
            pass
        self.activity.set()
        self._bump_terminal()

    def _bump_terminal(self) -> None:
        with self._terminal_lock:
            self._terminal += 1
            if self._terminal >= len(self.units):
                self.done.set()

    # -- staging and shutdown -----------------------------------------------

    def _stage_in(self, unit: ComputeUnit) -> None:
        if not unit.description.stage_in:
            return
        unit_dir = self.session_dir / "units" / unit.uid
        unit_dir.mkdir(parents=True, exist_ok=True)
        for src in unit.description.stage_in:
            shutil.copy(src, unit_dir / Path(src).name)

    def _stage_out(self, unit: ComputeUnit) -> None:
        if not unit.description.stage_out:
            return
        unit_dir = self.session_dir / "units" / unit.uid
        dest_dir = self.session_dir / "staged" / unit.uid
        dest_dir.mkdir(parents=True, exist_ok=True)
        for name in unit.description.stage_out:
            src = unit_dir / name
            if src.exists():
                shutil.copy(src, dest_dir / Path(name).name)

    def _abort(self) -> None:
        self._aborted = True
        self.stop.set()
        with self._handle_lock:
            handles = list(self._live_handles.values())
        for handle in handles:
            handle.terminate()

    def _cancel_leftovers(self) -> None:
        now = self.p_sched.clock()
        for unit in self.units.values():
            if unit.state in TERMINAL_STATES:
                continue
            if (unit.allocation is not None
                    and self.scheduler.live_allocations() > 0):
                try:
                    self.scheduler.unschedule(unit.allocation)
                    self.p_sched.record(EVENT_UNSCHED_DONE, now,
                                        unit=unit.uid, pilot=self.pilot_id)
                except Exception:
                    pass
            transition(unit, UnitState.CANCELED, now, self.p_sched,
                       self.pilot_id)
