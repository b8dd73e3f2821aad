"""minipilot: a desk-scale pilot-job runtime with trace analytics.

Acquire a resource placeholder once, then late-bind many tasks onto its
cores through a pluggable scheduler and latency-aware executors, on either
a real-process backend or a reproducible virtual-clock backend. Every
lifecycle transition is profiled; the analytics layer turns the traces
into makespan, utilization, and concurrency diagnostics.
"""

from .emulator import TaskPayload, sample_duration
from .executor import LatencyModel
from .model import (Allocation, Backend, ComputeUnit, PilotDescription,
                    ResourceModel, UnitDescription, UnitState, transition,
                    validate_pilot)
from .runtime import (Channel, Session, SessionResult, WorkloadStore,
                      run_session)
from .scheduler import (BlockFreeList, ContinuousScheduler,
                        HomogeneousScheduler, make_scheduler)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "Backend", "BlockFreeList", "Channel", "ComputeUnit",
    "ContinuousScheduler", "HomogeneousScheduler", "LatencyModel",
    "PilotDescription", "ResourceModel", "Session", "SessionResult",
    "TaskPayload", "UnitDescription", "UnitState", "WorkloadStore",
    "make_scheduler", "run_session", "sample_duration", "transition",
    "validate_pilot",
]
