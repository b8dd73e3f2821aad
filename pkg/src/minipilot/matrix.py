"""Scaling experiment matrices: many sessions, one summary table.

A weak matrix grows tasks and pilot cores at a fixed ratio so every point
runs as a single generation; a strong matrix fixes the task count and
varies the pilot. Each configuration runs ``repetitions`` times with seeds
derived deterministically from the matrix seed, and per-session failures
are reported without stopping the sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .analytics import build_report, load_trace, write_table
from .emulator import TaskPayload
from .errors import SchemaError
from .executor import LatencyModel
from .model import Backend, PilotDescription, UnitDescription
from .runtime import Session, SessionResult, run_session


@dataclass
class ExperimentMatrix:
    """One scaling sweep: geometry, payload, scheduler, latency, seeds."""

    mode: str
    task_counts: list[int]
    cores_per_task: int
    pilot_cores: list[int]
    payload: TaskPayload
    scheduler_kind: str = "continuous"
    repetitions: int = 3
    scale_factor: float = 1.0
    cores_per_node: int = 16
    backend: Backend = Backend.VIRTUAL
    latency: LatencyModel = field(default_factory=LatencyModel.zero)
    sched_base_cost: float = 0.0
    sched_visit_cost: float = 0.0
    seed: int = 0
    n_executors: int = 4
    out_dir: Path = Path("sessions")
    name: str = "matrix"
    walltime: float = 86400.0
    profile: bool = True

    def validate(self) -> None:
        if not self.task_counts:
            raise SchemaError("matrix.task_counts: empty")
        if not self.pilot_cores:
            raise SchemaError("matrix.pilot_cores: empty")
        if self.mode == "weak":
            if len(self.pilot_cores) != len(self.task_counts):
                raise SchemaError(
                    "matrix.pilot_cores: weak mode needs one pilot size per "
                    "task count")
            for i, (n, pc) in enumerate(zip(self.task_counts,
                                            self.pilot_cores)):
                if n * self.cores_per_task != pc:
                    raise SchemaError(
                        f"matrix.pilot_cores[{i}]: weak mode requires "
                        f"task_counts[{i}] x cores_per_task = pilot_cores[{i}]"
                        f" ({n} x {self.cores_per_task} != {pc})")
        elif self.mode == "strong":
            if len(self.task_counts) != 1:
                raise SchemaError(
                    "matrix.task_counts: strong mode takes a single count")
        else:
            raise SchemaError(f"matrix.mode: unknown mode {self.mode!r}")
        for i, pc in enumerate(self.pilot_cores):
            if pc % self.cores_per_node != 0:
                raise SchemaError(
                    f"matrix.pilot_cores[{i}]: {pc} not a multiple of "
                    f"{self.cores_per_node} cores per node")

    def configurations(self) -> list[tuple[int, int]]:
        """(task_count, pilot_cores) pairs, one per matrix point."""
        if self.mode == "weak":
            return list(zip(self.task_counts, self.pilot_cores))
        return [(self.task_counts[0], pc) for pc in self.pilot_cores]

    def session_for(self, point: int, rep: int) -> Session:
        n_tasks, pilot_cores = self.configurations()[point]
        pilot = PilotDescription(
            resource_name=self.name,
            node_count=pilot_cores // self.cores_per_node,
            cores_per_node=self.cores_per_node,
            walltime=self.walltime, backend=self.backend)
        units = [UnitDescription(unit_id=f"unit.{i:06d}",
                                 cores=self.cores_per_task,
                                 payload=self.payload)
                 for i in range(n_tasks)]
        sid = (f"{self.name}-{self.mode}-{n_tasks:06d}t-{pilot_cores:07d}c"
               f"-r{rep}")
        return Session(
            session_id=sid, pilot=pilot, units=units,
            scheduler_kind=self.scheduler_kind,
            sched_base_cost=self.sched_base_cost,
            sched_visit_cost=self.sched_visit_cost, latency=self.latency,
            n_executors=self.n_executors, profile=self.profile,
            out_dir=Path(self.out_dir), seed=derive_seed(self.seed, point, rep))


def derive_seed(base: int, point: int, rep: int) -> int:
    """Deterministic per-session seed for one matrix cell."""
    return base * 1_000_003 + point * 1_009 + rep


@dataclass
class MatrixRow:
    session_id: str
    n_tasks: int
    pilot_cores: int
    rep: int
    trace_path: str = ""
    ttx: float | None = None
    ideal_ttx: float | None = None
    overhead_pct: float | None = None
    workload_pct: float | None = None
    rp_overhead_pct: float | None = None
    idle_pct: float | None = None
    generations: int | None = None
    throughput: float | None = None
    clean: bool = False
    error: str = ""

    def as_dict(self) -> dict:
        return {
            "session": self.session_id, "tasks": self.n_tasks,
            "pilot_cores": self.pilot_cores, "rep": self.rep,
            "ttx_s": self.ttx, "ideal_ttx_s": self.ideal_ttx,
            "overhead_pct": self.overhead_pct,
            "util_workload_pct": self.workload_pct,
            "util_overhead_pct": self.rp_overhead_pct,
            "util_idle_pct": self.idle_pct,
            "generations": self.generations,
            "sched_tasks_per_s": self.throughput,
            "clean": int(self.clean), "trace": self.trace_path,
            "error": self.error,
        }


def run_matrix(matrix: ExperimentMatrix) -> list[MatrixRow]:
    """Run every (configuration x repetition) session and summarize.

    Sessions run sequentially so their timings never contend. A failing
    session contributes an error row and the sweep continues.
    """
    matrix.validate()
    rows: list[MatrixRow] = []
    for point, (n_tasks, pilot_cores) in enumerate(matrix.configurations()):
        for rep in range(matrix.repetitions):
            session = matrix.session_for(point, rep)
            row = MatrixRow(session_id=session.session_id, n_tasks=n_tasks,
                            pilot_cores=pilot_cores, rep=rep)
            try:
                result = run_session(session)
                row.trace_path = str(result.trace_path)
                row.clean = result.clean
                if session.profile:
                    _fill_metrics(row, result)
            except Exception as exc:  # keep sweeping
                row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    out = Path(matrix.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table([r.as_dict() for r in rows], out / f"{matrix.name}-summary.csv")
    return rows


def _fill_metrics(row: MatrixRow, result: SessionResult) -> None:
    report = build_report(load_trace(result.trace_path))
    row.ttx = report.ttx
    row.ideal_ttx = report.ideal_ttx
    row.overhead_pct = 100.0 * report.overhead_ratio
    row.workload_pct = report.utilization["workload_pct"]
    row.rp_overhead_pct = report.utilization["overhead_pct"]
    row.idle_pct = report.utilization["idle_pct"]
    row.generations = report.generations
    row.throughput = report.throughput


def summary_text(rows: list[MatrixRow]) -> str:
    header = (f"{'session':<38} {'tasks':>7} {'cores':>8} {'ttx[s]':>10} "
              f"{'ovh%':>7} {'work%':>6} {'rp%':>6} {'idle%':>6} {'gen':>4} "
              f"{'ok':>3}")
    lines = [header, "-" * len(header)]
    for r in rows:
        if r.error:
            lines.append(f"{r.session_id:<38} ERROR {r.error}")
            continue
        lines.append(
            f"{r.session_id:<38} {r.n_tasks:>7} {r.pilot_cores:>8} "
            f"{_fmt(r.ttx):>10} {_fmt(r.overhead_pct):>7} "
            f"{_fmt(r.workload_pct):>6} {_fmt(r.rp_overhead_pct):>6} "
            f"{_fmt(r.idle_pct):>6} {r.generations or '-':>4} "
            f"{'y' if r.clean else 'n':>3}")
    return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:.1f}" if v is not None else "-"
