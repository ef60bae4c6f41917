"""Exception types shared across the orchestrator."""

from __future__ import annotations


class ExalabError(Exception):
    """Base class for all orchestrator errors."""


class ValidationError(ExalabError):
    """A value failed its structural invariants."""

    def __init__(self, message: str, violations: list | None = None):
        super().__init__(message)
        self.violations = violations or []


class StateError(ExalabError):
    """An operation was applied to an object in the wrong state."""


class AdmissionError(ExalabError):
    """Authoritative re-gate denied a submission (retryable)."""


class InsufficientCapacity(ExalabError):
    """A lease request does not fit the pool's free capacity."""

    def __init__(self, axis: str, requested: int, free: int):
        super().__init__(f"{axis}: requested {requested} exceeds free {free}")
        self.axis = axis
        self.requested = requested
        self.free = free


class PoolInvariantError(ExalabError):
    """Internal accounting invariant broke (leased > capacity or sum mismatch)."""


class IllegalTransition(ExalabError):
    """A lifecycle event is not legal in the current state."""

    def __init__(self, state: str, event: str):
        super().__init__(f"event {event!r} is illegal in state {state!r}")
        self.state = state
        self.event = event


class UnknownExperiment(ExalabError):
    """No experiment with the given id exists."""


class ProvisionFault(ExalabError):
    """A simulated component failed to come up."""

    def __init__(self, node_id: str, message: str):
        super().__init__(f"{node_id}: {message}")
        self.node_id = node_id
        self.fault_message = message


class HandleTornDown(ExalabError):
    """Operation attempted on a torn-down driver handle."""


class WrongDriverKind(ExalabError):
    """Operation is not supported by this driver kind."""


class RangeError(ExalabError):
    """A numeric argument is outside its permitted range."""


class EmptyTrace(ExalabError):
    """A trace with zero samples cannot be summarized."""


class UnitMismatch(ExalabError):
    """KPI metric and threshold unit do not pair up."""


class UnsupportedMetric(ExalabError):
    """The KPI metric has no evaluation path in this deployment."""


class StorageError(ExalabError):
    """The object store failed to persist or read data."""


class NotFound(ExalabError):
    """No stored object under the given reference."""


class DanglingReference(ExalabError):
    """A bundle references an object that is not stored."""


class DuplicateExperiment(ExalabError):
    """The experiment id is already indexed (index is append-only)."""
