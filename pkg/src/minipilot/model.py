"""Pilot and compute-unit abstractions shared by every other module.

A pilot is a placeholder for computing resources (nodes x cores); compute
units are the tasks bound onto those resources after acquisition. The
resource model tracks per-core occupancy and is owned exclusively by the
scheduler; all other types are value objects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from .emulator import TaskPayload
from .errors import IllegalTransition, InvalidDescription

if TYPE_CHECKING:  # pragma: no cover
    from .executor import LatencyModel
    from .profiler import Profiler


class Backend(str, enum.Enum):
    REAL = "real"
    VIRTUAL = "virtual"


class UnitState(str, enum.Enum):
    NEW = "new"
    PENDING_SCHEDULE = "pending_schedule"
    SCHEDULED = "scheduled"
    PENDING_EXECUTION = "pending_execution"
    EXECUTING = "executing"
    DONE = "done"
    FAILED = "failed"
    CANCELED = "canceled"


TERMINAL_STATES = frozenset(
    {UnitState.DONE, UnitState.FAILED, UnitState.CANCELED})

# Forward edges of the lifecycle. Cancellation is legal from any live state
# (walltime expiry must be able to cancel units that were never scheduled)
# and a spawn failure can hit a unit before its payload ever starts.
_EDGES = {
    UnitState.NEW: {UnitState.PENDING_SCHEDULE, UnitState.CANCELED},
    UnitState.PENDING_SCHEDULE: {UnitState.SCHEDULED, UnitState.FAILED,
                                 UnitState.CANCELED},
    UnitState.SCHEDULED: {UnitState.PENDING_EXECUTION, UnitState.FAILED,
                          UnitState.CANCELED},
    UnitState.PENDING_EXECUTION: {UnitState.EXECUTING, UnitState.FAILED,
                                  UnitState.CANCELED},
    UnitState.EXECUTING: {UnitState.DONE, UnitState.FAILED,
                          UnitState.CANCELED},
    UnitState.DONE: set(),
    UnitState.FAILED: set(),
    UnitState.CANCELED: set(),
}


def legal_transition(src: UnitState, dst: UnitState) -> bool:
    return dst in _EDGES[src]


@dataclass(frozen=True)
class PilotDescription:
    """Requested shape of one resource placeholder."""

    resource_name: str
    node_count: int
    cores_per_node: int
    walltime: float
    backend: Backend = Backend.VIRTUAL
    latency_model: Optional["LatencyModel"] = None

    @property
    def total_cores(self) -> int:
        return self.node_count * self.cores_per_node

    def validate(self) -> None:
        if self.node_count <= 0 or self.cores_per_node <= 0:
            raise InvalidDescription(
                f"pilot needs positive node and core counts, got "
                f"{self.node_count} x {self.cores_per_node}")
        if self.walltime <= 0:
            raise InvalidDescription("pilot walltime must be > 0")


@dataclass(frozen=True)
class UnitDescription:
    """One task: core requirement, payload, optional staging."""

    unit_id: str
    cores: int
    payload: TaskPayload
    stage_in: tuple[str, ...] = ()
    stage_out: tuple[str, ...] = ()

    def __post_init__(self):
        if self.cores < 1:
            raise InvalidDescription(f"unit {self.unit_id}: cores must be >= 1")
        if not self.unit_id or any(c in self.unit_id for c in ",\n"):
            raise InvalidDescription(f"bad unit id {self.unit_id!r}")


@dataclass(frozen=True)
class Allocation:
    """Slots bound to one unit; a slot is one core on one node."""

    unit_id: str
    slots: tuple[tuple[str, int], ...]

    @property
    def cores(self) -> int:
        return len(self.slots)

    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for node_id, _ in self.slots:
            seen.setdefault(node_id)
        return list(seen)


class ResourceModel:
    """Per-core occupancy of a pilot's nodes, in declaration order.

    Owned by the scheduler worker; other components only ever see read-only
    views (slot sets, counters). Core state per node is kept as a busy
    bitmask plus a free-core counter so first-fit scans stay cheap.
    """

    def __init__(self, node_ids: list[str], cores_per_node: int):
        self.node_ids = list(node_ids)
        self.cores_per_node = cores_per_node
        self.free_count = [cores_per_node] * len(node_ids)
        self.busy_mask = [0] * len(node_ids)
        self._index = {nid: i for i, nid in enumerate(node_ids)}
        self._full = (1 << cores_per_node) - 1

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def total_cores(self) -> int:
        return self.node_count * self.cores_per_node

    def free_cores(self) -> int:
        return sum(self.free_count)

    def busy_cores(self) -> int:
        return self.total_cores - self.free_cores()

    def node_index(self, node_id: str) -> int:
        return self._index[node_id]

    def is_free(self, node_idx: int, core: int) -> bool:
        return not (self.busy_mask[node_idx] >> core) & 1

    def occupy(self, node_idx: int, core: int) -> None:
        bit = 1 << core
        if self.busy_mask[node_idx] & bit:
            raise InvalidDescription(
                f"slot ({self.node_ids[node_idx]}, {core}) already busy")
        self.busy_mask[node_idx] |= bit
        self.free_count[node_idx] -= 1

    def release(self, node_idx: int, core: int) -> None:
        bit = 1 << core
        if not self.busy_mask[node_idx] & bit:
            raise InvalidDescription(
                f"slot ({self.node_ids[node_idx]}, {core}) already free")
        self.busy_mask[node_idx] &= ~bit
        self.free_count[node_idx] += 1

    def free_slot_set(self) -> set[tuple[str, int]]:
        """Explicit set of free (node_id, core) slots, for checks and oracles."""
        out = set()
        for i, nid in enumerate(self.node_ids):
            mask = self.busy_mask[i]
            for c in range(self.cores_per_node):
                if not (mask >> c) & 1:
                    out.add((nid, c))
        return out


def validate_pilot(desc: PilotDescription) -> ResourceModel:
    """Check a pilot description and build its all-free resource model."""
    desc.validate()
    node_ids = [f"node{i:05d}" for i in range(desc.node_count)]
    return ResourceModel(node_ids, desc.cores_per_node)


def nodes_needed(cores: int, cores_per_node: int) -> int:
    """Whole nodes consumed by a multi-node unit (remainder rounds up)."""
    return math.ceil(cores / cores_per_node)


class ComputeUnit:
    """Runtime carrier for one unit: description plus mutable lifecycle state.

    Units flow through the pipeline one component at a time, so no locking
    is needed; the event timeline lives in the profiler, with a state/time
    summary kept here for invariant checks.
    """

    __slots__ = ("description", "state", "allocation", "exit_code",
                 "state_times", "sched_started", "sampled_duration")

    def __init__(self, description: UnitDescription):
        self.description = description
        self.state = UnitState.NEW
        self.allocation: Allocation | None = None
        self.exit_code: int | None = None
        self.state_times: list[tuple[UnitState, float]] = []
        self.sched_started = False
        self.sampled_duration: float | None = None

    @property
    def uid(self) -> str:
        return self.description.unit_id

    @property
    def cores(self) -> int:
        return self.description.cores

    def __repr__(self) -> str:
        return f"ComputeUnit({self.uid}, {self.state.value})"


def transition(unit: ComputeUnit, to: UnitState, now: float,
               profiler: "Profiler | None" = None,
               pilot: str = "") -> ComputeUnit:
    """Move a unit along the lifecycle, recording the change as an event.

    Raises IllegalTransition for anything that is not a forward edge.
    """
    if not legal_transition(unit.state, to):
        raise IllegalTransition(
            f"{unit.uid}: {unit.state.value} -> {to.value}")
    unit.state = to
    unit.state_times.append((to, now))
    if profiler is not None:
        profiler.record(f"state_{to.value}", now, unit=unit.uid, pilot=pilot)
    return unit
