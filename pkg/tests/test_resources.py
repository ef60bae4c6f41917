from __future__ import annotations

import random
import threading

import pytest

from exalab.errors import InsufficientCapacity
from exalab.resources import Lease, ResourcePool, ResourceVector

CAPACITY = ResourceVector(cpu_cores=3000, vgpus=30, storage_gb=500_000, chambers=4)


def make_pool() -> ResourcePool:
    return ResourcePool("default", CAPACITY)


def test_vector_arithmetic():
    a = ResourceVector(8, 1, 20, 0)
    b = ResourceVector(4, 0, 10, 2)
    assert a + b == ResourceVector(12, 1, 30, 2)
    assert (a + b) - b == a
    assert a.scaled(3) == ResourceVector(24, 3, 60, 0)
    assert b.fits_within(a + b)
    assert not (a + b).fits_within(a)
    assert ResourceVector().is_zero()


def test_vector_rejects_negative():
    with pytest.raises(ValueError):
        ResourceVector(cpu_cores=-1)


def test_first_excess_axis_order():
    demand = ResourceVector(cpu_cores=10, vgpus=10)
    have = ResourceVector(cpu_cores=5, vgpus=5)
    assert demand.first_excess_axis(have) == "cpu_cores"


def test_allocate_updates_leased():
    pool = make_pool()
    lease = pool.allocate("exp-1", ResourceVector(8, 0, 20, 0))
    assert pool.leased == ResourceVector(8, 0, 20, 0)
    assert pool.active_leases() == {lease.lease_id: lease}


def test_allocate_insufficient_names_axis():
    pool = make_pool()
    with pytest.raises(InsufficientCapacity) as err:
        pool.allocate("exp-1", ResourceVector(vgpus=31))
    assert err.value.axis == "vgpus"
    assert pool.leased.is_zero()


def test_release_restores_capacity_and_is_idempotent():
    pool = make_pool()
    lease = pool.allocate("exp-1", ResourceVector(cpu_cores=100))
    pool.release(lease.lease_id)
    assert pool.leased.is_zero()
    pool.release(lease.lease_id)  # second release: no-op
    assert pool.leased.is_zero()
    pool.release("lease-never-issued")  # unknown: no-op
    assert pool.leased.is_zero()


def test_allocate_many_is_all_or_nothing():
    pool = make_pool()
    with pytest.raises(InsufficientCapacity):
        pool.allocate_many("exp-1", [ResourceVector(cpu_cores=1600),
                                     ResourceVector(cpu_cores=1600)])
    assert pool.leased.is_zero()
    leases = pool.allocate_many("exp-1", [ResourceVector(cpu_cores=1000)] * 3)
    assert len(leases) == 3
    assert pool.leased == ResourceVector(cpu_cores=3000)


def test_concurrent_allocations_never_oversubscribe():
    # Randomized interleaving harness: two 1600-core grabs against 3000
    # can never both succeed.
    for round_no in range(60):
        pool = make_pool()
        rng = random.Random(round_no)
        outcomes: list[bool] = []
        lock = threading.Lock()

        def worker(delay: float) -> None:
            import time

            time.sleep(delay)
            try:
                pool.allocate("exp", ResourceVector(cpu_cores=1600))
                ok = True
            except InsufficientCapacity:
                ok = False
            with lock:
                outcomes.append(ok)

        threads = [
            threading.Thread(target=worker, args=(rng.random() / 1000,)) for _ in range(2)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert outcomes.count(True) == 1, f"round {round_no}: {outcomes}"
        assert pool.leased == ResourceVector(cpu_cores=1600)


def test_isolation_between_experiments():
    pool = make_pool()
    a = pool.allocate_many("exp-a", [ResourceVector(cpu_cores=10)] * 2)
    b = pool.allocate_many("exp-b", [ResourceVector(cpu_cores=7)] * 3)
    assert {l.lease_id for l in a}.isdisjoint({l.lease_id for l in b})
    for lease in a:
        pool.release(lease.lease_id)
    remaining = pool.active_leases()
    assert set(remaining) == {l.lease_id for l in b}
    assert pool.leased == ResourceVector(cpu_cores=21)


def test_release_listener_fires_outside_lock():
    pool = make_pool()
    seen = []
    pool.add_release_listener(lambda: seen.append(pool.leased))
    lease = pool.allocate("exp", ResourceVector(cpu_cores=5))
    pool.release(lease.lease_id)
    assert seen == [ResourceVector()]


def test_randomized_accounting_invariant():
    pool = make_pool()
    rng = random.Random(42)
    live: list[Lease] = []
    for _ in range(500):
        if live and rng.random() < 0.45:
            pool.release(live.pop(rng.randrange(len(live))).lease_id)
        else:
            amount = ResourceVector(
                cpu_cores=rng.randint(0, 50),
                vgpus=rng.randint(0, 2),
                storage_gb=rng.randint(0, 100),
                chambers=rng.randint(0, 1),
            )
            if amount.is_zero():
                continue
            try:
                live.append(pool.allocate("exp", amount))
            except InsufficientCapacity:
                pass
        assert pool.leased.fits_within(CAPACITY)
    for lease in live:
        pool.release(lease.lease_id)
    assert pool.leased.is_zero()
