"""Exception types raised by the runtime, the profiler, and the analytics layer."""


class PilotError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDescription(PilotError):
    """Pilot, unit, or payload description violates a basic constraint."""


class IllegalTransition(PilotError):
    """Requested unit state change is not a forward edge of the lifecycle."""


class UnitTooLarge(PilotError):
    """Unit requests more cores than the whole pilot owns (permanent, not transient)."""


class BlockSizeMismatch(PilotError):
    """Unit core count does not match the block size of a block free list."""


class DoubleFree(PilotError):
    """Allocation released twice."""


class IncompatibleMethod(PilotError):
    """Launch method not usable on the selected backend."""


class SpawnFailure(PilotError):
    """Launching a unit's processes failed."""


class LostChild(PilotError):
    """A child process disappeared before its completion was collected."""


class ChannelClosed(PilotError):
    """Send or receive on a closed channel."""


class SessionAborted(PilotError):
    """Session could not run at all (distinct from a clean walltime cancellation)."""


class IncompleteTrace(PilotError):
    """Trace lacks the events required to compute a metric."""


class InconsistentTrace(PilotError):
    """Event ordering in a trace violates the per-unit lifecycle order."""


class MissingSyncPoint(PilotError):
    """A profile file lacks the reference-clock samples needed for merging."""


class NegativeIdle(PilotError):
    """Utilization accounting produced negative idle time; indicates a bug."""


class UnknownEvent(PilotError):
    """Event name outside the canonical event set."""


class MissingEvents(PilotError):
    """No unit in the trace carries both events of a requested pair."""


class TooFewEvents(PilotError):
    """Not enough events to compute a rate."""


class SchemaError(PilotError):
    """Configuration file fails validation; message names the offending field."""


class UnknownKey(SchemaError):
    """Configuration contains a key or enum value that is not recognized."""
