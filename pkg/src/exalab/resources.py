"""Resource vectors, leases and the isolated capacity pool.

All pool mutations go through one lock, so allocate/release are atomic and
`leased <= capacity` holds at every observable instant.  The same lock backs
a condition variable that wakes queued experiments whenever a release frees
capacity.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import InsufficientCapacity, PoolInvariantError

log = logging.getLogger(__name__)

AXES = ("cpu_cores", "vgpus", "storage_gb", "chambers")


@dataclass(frozen=True)
class ResourceVector:
    cpu_cores: int = 0
    vgpus: int = 0
    storage_gb: int = 0
    chambers: int = 0

    def __post_init__(self):
        for axis in AXES:
            if getattr(self, axis) < 0:
                raise ValueError(f"{axis} must be >= 0")

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(getattr(self, a) + getattr(other, a) for a in AXES))

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(*(getattr(self, a) - getattr(other, a) for a in AXES))

    def scaled(self, n: int) -> "ResourceVector":
        return ResourceVector(*(getattr(self, a) * n for a in AXES))

    def fits_within(self, other: "ResourceVector") -> bool:
        return all(getattr(self, a) <= getattr(other, a) for a in AXES)

    def first_excess_axis(self, other: "ResourceVector") -> str | None:
        """First axis (in declaration order) where self exceeds other."""
        for axis in AXES:
            if getattr(self, axis) > getattr(other, axis):
                return axis
        return None

    def is_zero(self) -> bool:
        return all(getattr(self, a) == 0 for a in AXES)

    def as_dict(self) -> dict[str, int]:
        return {a: getattr(self, a) for a in AXES}

    @classmethod
    def from_dict(cls, data: dict) -> "ResourceVector":
        return cls(**{a: int(data.get(a, 0)) for a in AXES})


@dataclass(frozen=True)
class Lease:
    lease_id: str
    experiment_id: str
    amount: ResourceVector
    acquired_at: datetime


class ResourcePool:
    """Capacity accounting shared by all concurrent experiments."""

    def __init__(self, pool_id: str, capacity: ResourceVector):
        self.pool_id = pool_id
        self.capacity = capacity
        self._leased = ResourceVector()
        self._leases: dict[str, Lease] = {}
        self._lock = threading.RLock()
        # Notified on every release; queued experiments retry on it.
        self.released = threading.Condition(self._lock)
        self._listeners: list = []
        self._seq = 0

    def add_release_listener(self, callback) -> None:
        """Register a callback invoked (outside the pool lock) per release."""
        self._listeners.append(callback)

    @property
    def leased(self) -> ResourceVector:
        with self._lock:
            return self._leased

    def free(self) -> ResourceVector:
        with self._lock:
            return self.capacity - self._leased

    def active_leases(self) -> dict[str, Lease]:
        with self._lock:
            return dict(self._leases)

    def _check_invariants(self) -> None:
        total = ResourceVector()
        for lease in self._leases.values():
            total = total + lease.amount
        if total != self._leased:
            raise PoolInvariantError(
                f"pool {self.pool_id}: leased {self._leased} != sum of leases {total}"
            )
        if not self._leased.fits_within(self.capacity):
            raise PoolInvariantError(
                f"pool {self.pool_id}: leased {self._leased} exceeds capacity {self.capacity}"
            )

    def _allocate_locked(self, experiment_id: str, amount: ResourceVector) -> Lease:
        free = self.capacity - self._leased
        axis = amount.first_excess_axis(free)
        if axis is not None:
            raise InsufficientCapacity(axis, getattr(amount, axis), getattr(free, axis))
        self._seq += 1
        lease = Lease(
            lease_id=f"lease-{self._seq:08d}",
            experiment_id=experiment_id,
            amount=amount,
            acquired_at=datetime.now(timezone.utc),
        )
        self._leased = self._leased + amount
        self._leases[lease.lease_id] = lease
        self._check_invariants()
        return lease

    def allocate(self, experiment_id: str, amount: ResourceVector) -> Lease:
        """Atomically lease `amount`; raises InsufficientCapacity with the
        first violating axis.  Callers must not retry in a tight loop — wait
        on `released` instead."""
        with self._lock:
            return self._allocate_locked(experiment_id, amount)

    def allocate_many(self, experiment_id: str, amounts: list[ResourceVector]) -> list[Lease]:
        """All-or-nothing allocation of several leases under one lock hold."""
        with self._lock:
            granted: list[Lease] = []
            try:
                for amount in amounts:
                    granted.append(self._allocate_locked(experiment_id, amount))
            except InsufficientCapacity:
                for lease in granted:
                    self._release_locked(lease.lease_id)
                raise
            return granted

    def _release_locked(self, lease_id: str) -> None:
        lease = self._leases.pop(lease_id, None)
        if lease is None:
            log.debug("release of unknown lease %s ignored", lease_id)
            return
        self._leased = self._leased - lease.amount
        self._check_invariants()

    def release(self, lease_id: str) -> None:
        """Release a lease.  Idempotent; unknown ids are a logged no-op."""
        with self.released:
            self._release_locked(lease_id)
            self.released.notify_all()
        for callback in list(self._listeners):
            callback()

    def can_allocate(self, total: ResourceVector) -> bool:
        with self._lock:
            return total.fits_within(self.capacity - self._leased)
