"""Core-to-unit assignment.

Two schedulers share one interface. The continuous scheduler first-fit
scans the ordered node list and handles any mix of unit sizes; its cost per
placement grows with pilot size. The homogeneous scheduler precomputes
equal-sized blocks of whole-node cores and serves each request with a single
stack pop, trading generality for constant time per task.

``schedule`` returns an Allocation or None when no placement currently
exists (a transient condition, distinct from UnitTooLarge which can never
succeed). Both schedulers count the node inspections of their last search
in ``last_visits`` so a virtual clock can charge a deterministic, modeled
service time for each placement.
"""

from __future__ import annotations

import functools
from collections import deque
from typing import Iterable

import numpy as np

from .errors import BlockSizeMismatch, DoubleFree, InvalidDescription, UnitTooLarge
from .model import Allocation, ResourceModel, UnitDescription, nodes_needed

CONTINUOUS = "continuous"
HOMOGENEOUS = "homogeneous"

SCHEDULER_KINDS = (CONTINUOUS, HOMOGENEOUS)


class ContinuousScheduler:
    """General-purpose first-fit search over a continuum of nodes.

    Single-node units take the lowest free cores on the first node with
    enough room and never span nodes; larger units take whole consecutive
    fully-free nodes, rounding their core count up to full nodes. Lowest
    node index wins all ties, which keeps traces reproducible.
    """

    kind = CONTINUOUS

    def __init__(self, model: ResourceModel, base_cost: float = 0.0,
                 visit_cost: float = 0.0):
        self.model = model
        self.base_cost = base_cost
        self.visit_cost = visit_cost
        self.last_visits = 0
        self._live: dict[str, list[tuple[int, int]]] = {}

    def schedule(self, unit: UnitDescription) -> Allocation | None:
        m = self.model
        need = unit.cores
        if need > m.total_cores:
            raise UnitTooLarge(
                f"{unit.unit_id} wants {need} cores, pilot has {m.total_cores}")
        cpn = m.cores_per_node
        if need <= cpn:
            picked = self._fit_single_node(need)
        else:
            picked = self._fit_whole_nodes(nodes_needed(need, cpn))
        if picked is None:
            return None
        for ni, core in picked:
            m.occupy(ni, core)
        self._live[unit.unit_id] = picked
        slots = tuple((m.node_ids[ni], core) for ni, core in picked)
        return Allocation(unit_id=unit.unit_id, slots=slots)

    def unschedule(self, alloc: Allocation) -> None:
        picked = self._live.pop(alloc.unit_id, None)
        if picked is None:
            raise DoubleFree(f"allocation for {alloc.unit_id} is not live")
        for ni, core in picked:
            self.model.release(ni, core)

    def service_time(self, visits: int) -> float:
        return self.base_cost + self.visit_cost * visits

    def live_allocations(self) -> int:
        return len(self._live)

    def _fit_single_node(self, need: int) -> list[tuple[int, int]] | None:
        m = self.model
        free = m.free_count
        n = len(free)
        i = 0
        while i < n and free[i] < need:
            i += 1
        self.last_visits = min(i + 1, n)
        if i == n:
            return None
        picked = []
        mask = m.busy_mask[i]
        for core in range(m.cores_per_node):
            if not (mask >> core) & 1:
                picked.append((i, core))
                if len(picked) == need:
                    break
        return picked

    def _fit_whole_nodes(self, k: int) -> list[tuple[int, int]] | None:
        m = self.model
        free = m.free_count
        cpn = m.cores_per_node
        n = len(free)
        visits = 0
        i = 0
        while i + k <= n:
            j = i
            lim = i + k
            while j < lim and free[j] == cpn:
                j += 1
            if j == lim:
                visits += k
                self.last_visits = visits
                return [(ni, core) for ni in range(i, lim)
                        for core in range(cpn)]
            visits += j - i + 1
            i = j + 1  # node j is not fully free; no run can include it
        self.last_visits = max(visits, 1)
        return None


class BlockFreeList:
    """Precomputed equal-size blocks of whole-node cores, kept as a stack."""

    def __init__(self, model: ResourceModel, block_size: int):
        cpn = model.cores_per_node
        if block_size <= 0:
            raise InvalidDescription("block size must be positive")
        if block_size % cpn != 0 and cpn % block_size != 0:
            raise BlockSizeMismatch(
                f"block size {block_size} must divide or be a multiple of "
                f"{cpn} cores per node")
        self.block_size = block_size
        self.blocks: list[tuple[tuple[int, int], ...]] = []
        if block_size >= cpn:
            span = block_size // cpn
            for start in range(0, model.node_count - span + 1, span):
                self.blocks.append(tuple(
                    (ni, c) for ni in range(start, start + span)
                    for c in range(cpn)))
        else:
            per_node = cpn // block_size
            for ni in range(model.node_count):
                for b in range(per_node):
                    self.blocks.append(tuple(
                        (ni, c) for c in range(b * block_size,
                                               (b + 1) * block_size)))
        # LIFO stack; seeded in reverse so the first pop is block 0.
        self.free_blocks = list(range(len(self.blocks) - 1, -1, -1))

    def __len__(self) -> int:
        return len(self.free_blocks)


class HomogeneousScheduler:
    """Constant-time lookup scheduler for uniform bag-of-tasks workloads.

    The critical path is a stack pop instead of a search, so the per-task
    cost does not depend on pilot size. Only units whose core count equals
    the configured block size are accepted.
    """

    kind = HOMOGENEOUS

    def __init__(self, model: ResourceModel, block_size: int,
                 base_cost: float = 0.0, visit_cost: float = 0.0):
        self.model = model
        self.freelist = BlockFreeList(model, block_size)
        self.base_cost = base_cost
        self.visit_cost = visit_cost
        self.last_visits = 1
        self._live: dict[str, int] = {}

    def schedule(self, unit: UnitDescription) -> Allocation | None:
        if unit.cores != self.freelist.block_size:
            raise BlockSizeMismatch(
                f"{unit.unit_id} wants {unit.cores} cores, block size is "
                f"{self.freelist.block_size}")
        self.last_visits = 1
        if not self.freelist.free_blocks:
            return None
        idx = self.freelist.free_blocks.pop()
        self._live[unit.unit_id] = idx
        m = self.model
        slots = []
        for ni, core in self.freelist.blocks[idx]:
            m.occupy(ni, core)
            slots.append((m.node_ids[ni], core))
        return Allocation(unit_id=unit.unit_id, slots=tuple(slots))

    def unschedule(self, alloc: Allocation) -> None:
        idx = self._live.pop(alloc.unit_id, None)
        if idx is None:
            raise DoubleFree(f"allocation for {alloc.unit_id} is not live")
        for ni, core in self.freelist.blocks[idx]:
            self.model.release(ni, core)
        self.freelist.free_blocks.append(idx)

    def service_time(self, visits: int) -> float:
        return self.base_cost + self.visit_cost * visits

    def live_allocations(self) -> int:
        return len(self._live)


def make_scheduler(kind: str, model: ResourceModel, *,
                   block_size: int | None = None, base_cost: float = 0.0,
                   visit_cost: float = 0.0):
    if kind == CONTINUOUS:
        return ContinuousScheduler(model, base_cost, visit_cost)
    if kind == HOMOGENEOUS:
        if block_size is None:
            raise InvalidDescription("homogeneous scheduler needs a block size")
        return HomogeneousScheduler(model, block_size, base_cost, visit_cost)
    raise InvalidDescription(f"unknown scheduler kind {kind!r}")


def fifo_schedule(units: Iterable[UnitDescription], scheduler):
    """Attempt units strictly in order until the first one that does not fit.

    Returns (placed pairs, blocked deque). The blocked head stays at the
    front: no unit may bypass it, which is what preserves the generation
    structure of batched workloads.
    """
    pending = deque(units)
    placed: list[tuple[UnitDescription, Allocation]] = []
    while pending:
        alloc = scheduler.schedule(pending[0])
        if alloc is None:
            break
        placed.append((pending.popleft(), alloc))
    return placed, pending


# Reference per-task scheduling times (seconds, mean over tasks) measured
# for the search-based scheduler at four workload sizes, with two whole
# nodes scanned per placed task. Fitting wait(n) = base*n/2 + visit*n^2/3
# to these points yields the default service-cost model used when a virtual
# session wants the search cost to consume simulated time.
_SERVICE_REFERENCE = ((512, 18.0), (1024, 39.0), (2048, 129.0), (4096, 350.0))


@functools.cache
def fitted_service_costs() -> tuple[float, float]:
    """Least-squares (base_cost, visit_cost) from the reference timings."""
    n = np.array([p[0] for p in _SERVICE_REFERENCE], dtype=float)
    w = np.array([p[1] for p in _SERVICE_REFERENCE], dtype=float)
    design = np.stack([n / 2.0, n ** 2 / 3.0], axis=1)
    coef, *_ = np.linalg.lstsq(design, w, rcond=None)
    return float(coef[0]), float(coef[1])
