"""Measured scheduler service time across pilot sizes.

Fills a pilot with equal-sized units, timing every placement with the wall
clock, then drains it and repeats. The whole scale matrix is swept several
times in interleaved passes so a transient slowdown of the host spreads
over every point instead of distorting one of them. The search scheduler's
per-task cost grows with pilot size while the lookup scheduler stays flat.

Throughput is placements per second of fill time (drain phases between
fills are benchmark bookkeeping and excluded). The optionally emitted
profiles carry one sched_start/sched_done pair per placement for the
plotting and trace tooling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emulator import TaskPayload
from .model import PilotDescription, UnitDescription, validate_pilot
from .profiler import EVENT_SCHED_DONE, EVENT_SCHED_START, Profiler
from .scheduler import CONTINUOUS, HOMOGENEOUS, make_scheduler

DEFAULT_BLOCK_COUNTS = (64, 256, 1024, 8192)

_PAYLOAD = TaskPayload("sleep", 1.0, 0.0)


@dataclass(frozen=True)
class BenchPoint:
    kind: str
    blocks: int
    pilot_cores: int
    n_ops: int
    median_s: float
    mean_s: float
    p95_s: float
    throughput: float

    def row(self) -> dict:
        return {
            "kind": self.kind, "blocks": self.blocks,
            "pilot_cores": self.pilot_cores, "n_ops": self.n_ops,
            "median_us": self.median_s * 1e6, "mean_us": self.mean_s * 1e6,
            "p95_us": self.p95_s * 1e6, "tasks_per_s": self.throughput,
        }


@dataclass
class _Collector:
    kind: str
    blocks: int
    pilot_cores: int
    profiler: Profiler | None
    durations: list = field(default_factory=list)
    fill_seconds: float = 0.0

    def point(self) -> BenchPoint:
        arr = np.asarray(self.durations)
        return BenchPoint(
            kind=self.kind, blocks=self.blocks, pilot_cores=self.pilot_cores,
            n_ops=len(self.durations), median_s=float(np.median(arr)),
            mean_s=float(arr.mean()), p95_s=float(np.percentile(arr, 95)),
            throughput=(len(self.durations) / self.fill_seconds
                        if self.fill_seconds > 0 else 0.0))


def profile_path(out_dir: Path, kind: str, blocks: int) -> Path:
    return Path(out_dir) / f"bench-{kind}-{blocks:06d}.prof"


def run_scheduler_benchmark(block_counts=DEFAULT_BLOCK_COUNTS,
                            cores_per_task: int = 4,
                            cores_per_node: int = 16,
                            min_ops: int = 512,
                            passes: int = 3,
                            out_dir: str | Path | None = None,
                            kinds=(CONTINUOUS, HOMOGENEOUS)) -> list[BenchPoint]:
    """Time fill/drain cycles at each scale for each scheduler kind.

    ``blocks`` is the number of concurrently placeable tasks, so the pilot
    holds blocks x cores_per_task cores. Every (kind, scale) point collects
    at least ``min_ops`` placement samples per pass.
    """
    collectors: dict[tuple[str, int], _Collector] = {}
    for kind in kinds:
        for blocks in block_counts:
            prof = None
            if out_dir is not None:
                prof = Profiler(profile_path(Path(out_dir), kind, blocks),
                                component="scheduler", worker=kind,
                                clock=time.perf_counter)
                prof.sync_point()
            collectors[kind, blocks] = _Collector(
                kind=kind, blocks=blocks,
                pilot_cores=blocks * cores_per_task, profiler=prof)
    for pass_idx in range(passes):
        for kind in kinds:
            for blocks in block_counts:
                _bench_pass(collectors[kind, blocks], pass_idx,
                            cores_per_task, cores_per_node, min_ops)
    points = []
    for collector in collectors.values():
        if collector.profiler is not None:
            collector.profiler.sync_point()
            collector.profiler.close()
        points.append(collector.point())
    return points


def _bench_pass(acc: _Collector, pass_idx: int, cores_per_task: int,
                cores_per_node: int, min_ops: int) -> None:
    blocks = acc.blocks
    node_count = max(1, acc.pilot_cores // cores_per_node)
    pilot = PilotDescription("bench", node_count, cores_per_node,
                             walltime=1.0)
    sched = make_scheduler(acc.kind, validate_pilot(pilot),
                           block_size=cores_per_task)
    prof = acc.profiler
    cycles = max(1, -(-min_ops // blocks))
    clock = time.perf_counter
    for cycle in range(cycles):
        # fresh unit ids per cycle so per-unit trace analysis sees each
        # placement exactly once
        tag = pass_idx * 1000 + cycle
        units = [UnitDescription(unit_id=f"bench.{tag:04d}.{i:06d}",
                                 cores=cores_per_task, payload=_PAYLOAD)
                 for i in range(blocks)]
        placed = []
        fill_start = None
        fill_end = None
        for unit in units:
            t0 = clock()
            alloc = sched.schedule(unit)
            t1 = clock()
            acc.durations.append(t1 - t0)
            if prof is not None:
                prof.record(EVENT_SCHED_START, t0, unit=unit.unit_id)
                prof.record(EVENT_SCHED_DONE, t1, unit=unit.unit_id)
            if fill_start is None:
                fill_start = t0
            fill_end = t1
            placed.append(alloc)
        acc.fill_seconds += fill_end - fill_start
        for alloc in placed:
            sched.unschedule(alloc)
