"""Asynchronous experiment lifecycle engine.

Admission is FIFO: a submission is authoritatively re-gated against live
pool state (denials surface as retryable AdmissionError), then waits in
`queued` until the dispatcher can lease every run's resources in one atomic
grab.  Each experiment then runs its per-core runs concurrently through
provisioning, measurement, collection and teardown.  Teardown happens
exactly once per experiment on every path (success, fault, cancel).

One run faulting does not kill its siblings: they finish, the verdict is
computed over the completed runs and flagged partial, and the experiment
ends `failed`.
"""

from __future__ import annotations

import logging
import queue as queue_mod
import threading
import time
from collections import deque
from datetime import datetime, timezone

from . import descriptor as descriptor_mod
from . import intent as intent_mod
from . import telemetry
from .drivers import DriverContext, DriverHandle
from .errors import (
    AdmissionError,
    HandleTornDown,
    IllegalTransition,
    InsufficientCapacity,
    ProvisionFault,
    UnknownExperiment,
    ValidationError,
)
from .intent import ExperimentPlan, Policy
from .repository import ExperimentBundle, Repository
from .resources import ResourcePool, ResourceVector
from .telemetry import ThroughputTrace, TraceSummary

log = logging.getLogger(__name__)

QUEUED = "queued"
PROVISIONING = "provisioning"
RUNNING = "running"
COLLECTING = "collecting"
TEARING_DOWN = "tearing_down"
COMPLETED = "completed"
FAILED = "failed"
CANCELLED = "cancelled"

TERMINAL_STATES = frozenset({COMPLETED, FAILED, CANCELLED})

_TRANSITIONS = {
    (QUEUED, "start"): PROVISIONING,
    (PROVISIONING, "provisioned"): RUNNING,
    (RUNNING, "measurement_done"): COLLECTING,
    (COLLECTING, "collected"): TEARING_DOWN,
}


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _ts() -> str:
    return _now().isoformat(timespec="milliseconds")


class _Abort(Exception):
    """Internal control flow: lifecycle left the happy path."""


class ExperimentRecord:
    """Lifecycle state machine instance; owned by its executor thread."""

    def __init__(self, experiment_id: str, plan: ExperimentPlan,
                 descriptor: descriptor_mod.ExperimentDescriptor):
        self.experiment_id = experiment_id
        self.plan = plan
        self.descriptor = descriptor
        self.state = QUEUED
        self.leases: list = []
        self.run_results: dict[str, str] = {}
        self.log: list[tuple[str, str, str]] = []
        self.verdict: telemetry.KpiVerdict | None = None
        self.metrics_ref: str | None = None
        self.submitted_at = _now()
        self.finished_at: datetime | None = None

        self.cancel_signal = threading.Event()
        self.terminal = threading.Event()
        self.lock = threading.RLock()
        self.dispatched = False

        self.handles: dict[str, DriverHandle] = {}
        self.traces: list[ThroughputTrace] = []
        self.run_faults: dict[str, str] = {}
        self._pending_outcome: str | None = None
        self._teardown_done = False
        self._history: list[dict] = []
        self._subscribers: list[queue_mod.Queue] = []

    # run labels distinguish repeated runs of the same core
    def run_labels(self) -> list[tuple[str, str]]:
        labels: list[tuple[str, str]] = []
        seen: dict[str, int] = {}
        for core in self.plan.target_cores:
            n = seen.get(core, 0) + 1
            seen[core] = n
            labels.append((core, core if n == 1 else f"{core}#{n}"))
        return labels

    def append_log(self, phase: str, message: str) -> None:
        with self.lock:
            self.log.append((_ts(), phase, message))

    def note_run_fault(self, label: str, message: str) -> None:
        with self.lock:
            self.run_faults[label] = message
            if self._pending_outcome is None:
                self._pending_outcome = FAILED
            self.append_log(self.state, f"run {label} faulted: {message}")

    @property
    def driver_kind(self) -> str:
        from .drivers import DRIVER_KIND_BY_MODALITY

        return DRIVER_KIND_BY_MODALITY.get(self.plan.modality, "stub")

    # -- state machine -----------------------------------------------------

    def advance(self, event: str, message: str = "") -> "ExperimentRecord":
        """Apply one lifecycle event; raises IllegalTransition otherwise."""
        with self.lock:
            if self.state in TERMINAL_STATES:
                raise IllegalTransition(self.state, event)
            if event == "cancel":
                self._pending_outcome = CANCELLED  # cancel always wins
                new_state = TEARING_DOWN
            elif event == "fault":
                if self._pending_outcome != CANCELLED:
                    self._pending_outcome = FAILED
                new_state = TEARING_DOWN
            elif event == "torn_down":
                if self.state != TEARING_DOWN:
                    raise IllegalTransition(self.state, event)
                new_state = self._pending_outcome or COMPLETED
            else:
                new_state = _TRANSITIONS.get((self.state, event))
                if new_state is None:
                    raise IllegalTransition(self.state, event)
            self.state = new_state
            self.append_log(new_state, message or f"event {event}")
            if new_state in TERMINAL_STATES:
                self.finished_at = _now()
            self.emit(
                "state",
                state=new_state,
                verdict=self.verdict.as_dict() if self.verdict else None,
            )
        return self

    def mark_terminal(self) -> None:
        """Signal waiters and close streams; called once bundling is done."""
        with self.lock:
            self.terminal.set()
            self._close_subscribers()

    # -- live events ---------------------------------------------------------

    def emit(self, kind: str, **payload) -> None:
        with self.lock:
            event = {
                "event": kind,
                "data": {
                    "experiment_id": self.experiment_id,
                    "state": self.state,
                    "timestamp": _ts(),
                    **payload,
                },
            }
            self._history.append(event)
            for q in self._subscribers:
                q.put(event)

    def _close_subscribers(self) -> None:
        for q in self._subscribers:
            q.put(None)

    def subscribe(self) -> tuple[list[dict], queue_mod.Queue]:
        """History snapshot plus a live queue (None sentinel on terminal)."""
        with self.lock:
            q: queue_mod.Queue = queue_mod.Queue()
            history = list(self._history)
            if self.state in TERMINAL_STATES:
                q.put(None)
            else:
                self._subscribers.append(q)
            return history, q

    def unsubscribe(self, q: queue_mod.Queue) -> None:
        with self.lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def snapshot(self) -> dict:
        with self.lock:
            return {
                "experiment_id": self.experiment_id,
                "state": self.state,
                "modality": self.plan.modality,
                "driver_kind": self.driver_kind,
                "app_under_test": self.plan.app_under_test,
                "target_cores": list(self.plan.target_cores),
                "kpi": self.plan.kpi.as_dict(),
                "descriptor_id": self.descriptor.descriptor_id,
                "seed": self.plan.seed,
                "duration_s": self.plan.duration_s,
                "interval_s": self.plan.interval_s,
                "submitted_at": self.submitted_at.isoformat(),
                "finished_at": self.finished_at.isoformat() if self.finished_at else None,
                "leases": [
                    {"lease_id": l.lease_id, "amount": l.amount.as_dict()} for l in self.leases
                ],
                "log": [list(entry) for entry in self.log],
                "run_faults": dict(self.run_faults),
                "run_results": dict(self.run_results),
                "metrics_ref": self.metrics_ref,
                "verdict": self.verdict.as_dict() if self.verdict else None,
            }


def advance(record: ExperimentRecord, event: str, message: str = "") -> ExperimentRecord:
    """Module-level alias for the record state machine."""
    return record.advance(event, message)


class Scheduler:
    """FIFO admission + concurrent lifecycle execution over one pool."""

    def __init__(self, pool: ResourcePool, drivers: DriverContext,
                 repository: Repository, policy: Policy | None = None):
        self.pool = pool
        self.drivers = drivers
        self.repository = repository
        self.policy = policy or Policy()
        self._records: dict[str, ExperimentRecord] = {}
        self._queue: deque[str] = deque()
        self._lock = threading.RLock()
        self._wake = threading.Condition(self._lock)
        self._active = 0
        self._threads: list[threading.Thread] = []
        self._shutdown = threading.Event()
        pool.add_release_listener(self._notify)
        self._dispatcher = threading.Thread(
            target=self._dispatch_loop, name="exalab-dispatcher", daemon=True
        )
        self._dispatcher.start()

    # -- submission ----------------------------------------------------------

    def _check_descriptor(self, plan: ExperimentPlan,
                          desc: descriptor_mod.ExperimentDescriptor) -> None:
        violations = descriptor_mod.validate(desc)
        if violations:
            raise ValidationError("descriptor invalid", violations)
        if desc.modality != plan.modality:
            raise ValidationError(
                f"descriptor modality {desc.modality!r} != plan modality {plan.modality!r}"
            )
        topo_cores = {c.lower() for c in desc.core_implementations()}
        missing = {c for c in plan.target_cores if c.lower() not in topo_cores}
        if missing:
            raise ValidationError(f"descriptor topology lacks cores: {sorted(missing)}")
        cfg = desc.configuration
        for key, expected in (
            ("duration_s", plan.duration_s),
            ("interval_s", plan.interval_s),
            ("seed", plan.seed),
        ):
            if cfg.get(key) != expected:
                raise ValidationError(f"descriptor configuration.{key} != plan.{key}")

    def submit(self, plan: ExperimentPlan,
               descriptor: descriptor_mod.ExperimentDescriptor) -> str:
        """Admit one experiment; returns immediately with its id."""
        return self.submit_many([(plan, descriptor)])[0]

    def submit_many(self, items: list[tuple[ExperimentPlan, descriptor_mod.ExperimentDescriptor]]
                    ) -> list[str]:
        """All-or-nothing admission of several experiments (used to fan a
        multi-core request out into per-core experiments atomically)."""
        if not items:
            return []
        for plan, desc in items:
            self._check_descriptor(plan, desc)
        with self._wake:
            free = self.pool.free()
            total = ResourceVector()
            for plan, _ in items:
                decision = intent_mod.gate(plan, free, self.policy)
                if decision.kind == intent_mod.DENIED:
                    raise AdmissionError(f"admission re-gate denied: {decision.reason}")
                total = total + plan.per_run_resources.scaled(plan.runs)
            axis = total.first_excess_axis(free)
            if axis is not None:
                raise AdmissionError(
                    f"admission re-gate denied: {axis}: combined demand "
                    f"{getattr(total, axis)} exceeds free {getattr(free, axis)}"
                )
            ids = []
            for plan, desc in items:
                experiment_id = self.repository.next_experiment_id()
                record = ExperimentRecord(experiment_id, plan, desc)
                record.append_log(QUEUED, "submitted")
                record.emit("state", state=QUEUED, verdict=None)
                self._records[experiment_id] = record
                self._queue.append(experiment_id)
                ids.append(experiment_id)
            self._wake.notify_all()
            return ids

    # -- dispatch ------------------------------------------------------------

    def _notify(self) -> None:
        with self._wake:
            self._wake.notify_all()

    def _next_ready_locked(self) -> ExperimentRecord | None:
        while self._queue:
            head = self._records[self._queue[0]]
            if head.cancel_signal.is_set() or head.state != QUEUED:
                self._queue.popleft()
                continue
            if self._active >= self.policy.max_concurrent_experiments:
                return None
            amounts = [head.plan.per_run_resources] * head.plan.runs
            try:
                leases = self.pool.allocate_many(head.experiment_id, amounts)
            except InsufficientCapacity:
                return None  # wait in queued; retried on the next release
            head.leases = leases
            head.dispatched = True
            head.append_log(
                QUEUED,
                f"allocated {head.plan.runs} lease(s) of {head.plan.per_run_resources.as_dict()}",
            )
            self._queue.popleft()
            self._active += 1
            return head
        return None

    def _dispatch_loop(self) -> None:
        while not self._shutdown.is_set():
            with self._wake:
                record = self._next_ready_locked()
                if record is None:
                    self._wake.wait(timeout=0.05)
                    continue
            worker = threading.Thread(
                target=self._execute,
                args=(record,),
                name=f"exalab-{record.experiment_id}",
                daemon=True,
            )
            self._threads.append(worker)
            worker.start()

    # -- lifecycle phases ------------------------------------------------------

    def _check_cancel(self, record: ExperimentRecord) -> None:
        if record.cancel_signal.is_set() and record.state not in TERMINAL_STATES:
            if record.state != TEARING_DOWN:
                record.advance("cancel", "cancel requested")
            raise _Abort

    def _phase_provision(self, record: ExperimentRecord) -> None:
        self._check_cancel(record)
        record.advance("start", "provisioning simulated infrastructure")
        lease_by_run = dict(zip([label for _, label in record.run_labels()], record.leases))

        def provision_one(core: str, label: str) -> None:
            try:
                handle = self.drivers.provision(
                    record.descriptor,
                    lease_by_run[label],
                    core_name=core,
                    run_label=label,
                    log=lambda msg, _l=label: record.append_log(record.state, f"[{_l}] {msg}"),
                )
            except ProvisionFault as exc:
                record.note_run_fault(label, str(exc))
                return
            with record.lock:
                record.handles[label] = handle

        workers = [
            threading.Thread(target=provision_one, args=(core, label), daemon=True)
            for core, label in record.run_labels()
        ]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        self._check_cancel(record)
        if not record.handles:
            record.advance("fault", "every run failed to provision")
            raise _Abort
        record.advance("provisioned", f"{len(record.handles)} run(s) live")

    def _phase_measure(self, record: ExperimentRecord) -> None:
        plan = record.plan

        def measure_one(label: str, handle: DriverHandle) -> None:
            for traffic in sorted(plan.kpi.traffic_kinds):
                try:
                    trace = handle.run_measurement(
                        traffic,
                        plan.duration_s,
                        plan.interval_s,
                        cancel=record.cancel_signal,
                        on_sample=lambda t, mbps, _l=label, _tr=traffic: record.emit(
                            "sample",
                            sample={"core": _l, "traffic": _tr, "t_offset_s": t, "mbps": mbps},
                        ),
                    )
                except (HandleTornDown, ProvisionFault) as exc:
                    record.note_run_fault(label, str(exc))
                    return
                with record.lock:
                    record.traces.append(trace)
                if record.cancel_signal.is_set():
                    return

        workers = [
            threading.Thread(target=measure_one, args=(label, handle), daemon=True)
            for label, handle in sorted(record.handles.items())
        ]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        self._check_cancel(record)
        record.advance("measurement_done", "all measurements collected")

    def _phase_collect(self, record: ExperimentRecord) -> None:
        plan = record.plan
        summaries: dict[tuple[str, str], TraceSummary] = {}
        secondary: dict[tuple[str, str], dict] = {}
        for trace in record.traces:
            if trace.truncated or not trace.samples:
                continue
            summaries[(trace.core_name, trace.traffic)] = telemetry.summarize(trace)
        for handle in record.handles.values():
            secondary.update(handle.secondary)
        expected = {
            (label, traffic)
            for _, label in record.run_labels()
            for traffic in plan.kpi.traffic_kinds
        }
        if summaries:
            verdict = telemetry.evaluate_kpi(summaries, plan.kpi, expected)
            with record.lock:
                record.verdict = verdict
            record.append_log(
                COLLECTING,
                f"verdict: overall_pass={verdict.overall_pass} partial={verdict.partial}",
            )
            if not record.run_faults:
                complete = [t for t in record.traces if not t.truncated]
                ref = telemetry.archive_metrics(
                    self.repository,
                    record.experiment_id,
                    record.descriptor.descriptor_id,
                    complete,
                    summaries,
                    verdict,
                    secondary,
                )
                with record.lock:
                    record.metrics_ref = ref
                    record.run_results = {label: ref for _, label in record.run_labels()}
                record.append_log(COLLECTING, f"metrics archived as {ref}")
        else:
            record.advance("fault", "no completed runs to collect")
            raise _Abort
        self._check_cancel(record)
        record.advance("collected", "collection finished")

    def _teardown(self, record: ExperimentRecord) -> None:
        with record.lock:
            if record._teardown_done:
                return
            record._teardown_done = True
        for handle in record.handles.values():
            handle.teardown()
        for lease in record.leases:
            self.pool.release(lease.lease_id)
        with record.lock:
            record.leases = []
        record.append_log(TEARING_DOWN, "teardown: components destroyed, leases released")

    def _finalize(self, record: ExperimentRecord) -> None:
        with record.lock:
            if record.state not in TERMINAL_STATES and record.state != TEARING_DOWN:
                # Unexpected executor exception before a clean transition.
                record.advance("fault", "lifecycle aborted unexpectedly")
        self._teardown(record)
        if record.state not in TERMINAL_STATES:
            record.advance("torn_down", "lifecycle finished")
        with record.lock:
            if record.state == CANCELLED:
                record.verdict = None  # cancelled runs carry no verdict
                record.metrics_ref = None
        self._bundle(record)
        record.mark_terminal()
        with self._wake:
            if record.dispatched:
                self._active -= 1
            self._wake.notify_all()

    def _bundle(self, record: ExperimentRecord) -> None:
        try:
            descriptor_ref = self.repository.put_object(
                descriptor_mod.canonicalize(record.descriptor)
            )
            log_text = "".join(
                f"{ts} [{phase}] {message}\n" for ts, phase, message in record.log
            )
            log_ref = self.repository.put_object(log_text.encode("utf-8"))
            bundle = ExperimentBundle(
                experiment_id=record.experiment_id,
                descriptor_ref=descriptor_ref,
                log_ref=log_ref,
                metrics_ref=record.metrics_ref if record.state == COMPLETED else None,
                state=record.state,
                submitted_at=record.submitted_at,
                finished_at=record.finished_at or _now(),
            )
            self.repository.index_bundle(bundle)
        except Exception:
            log.exception("failed to index bundle for %s", record.experiment_id)

    def _execute(self, record: ExperimentRecord) -> None:
        try:
            self._phase_provision(record)
            self._phase_measure(record)
            self._phase_collect(record)
        except _Abort:
            pass
        except Exception as exc:  # defensive: no experiment may wedge the pool
            log.exception("experiment %s aborted", record.experiment_id)
            if record.state not in TERMINAL_STATES and record.state != TEARING_DOWN:
                record.advance("fault", f"internal error: {exc}")
        finally:
            self._finalize(record)

    # -- queries and control ---------------------------------------------------

    def get(self, experiment_id: str) -> ExperimentRecord:
        with self._lock:
            record = self._records.get(experiment_id)
        if record is None:
            raise UnknownExperiment(experiment_id)
        return record

    def records(self) -> list[ExperimentRecord]:
        with self._lock:
            return list(self._records.values())

    def cancel(self, experiment_id: str) -> dict:
        """Signal cancellation; drives queued experiments out inline and
        returns an acknowledgement snapshot. No-op on terminal records."""
        record = self.get(experiment_id)
        with self._lock:
            with record.lock:
                if record.state in TERMINAL_STATES:
                    return {"experiment_id": experiment_id, "state": record.state,
                            "already_terminal": True}
                record.cancel_signal.set()
                if record.state == TEARING_DOWN:
                    # Teardown already underway: flip its outcome to cancelled.
                    record.advance("cancel", "cancel requested during teardown")
                inline = record.state == QUEUED and not record.dispatched
                if inline and experiment_id in self._queue:
                    self._queue.remove(experiment_id)
        if inline:
            record.advance("cancel", "cancelled while queued")
            self._finalize(record)
        return {"experiment_id": experiment_id, "state": record.state,
                "already_terminal": False}

    def gate_wait(self, experiment_id: str, timeout_s: float) -> str:
        """Block until terminal or timeout; returns pass | fail | timeout."""
        record = self.get(experiment_id)
        if not record.terminal.wait(timeout=max(0.0, timeout_s)):
            return "timeout"
        if record.state == COMPLETED and record.verdict and record.verdict.overall_pass:
            return "pass"
        return "fail"

    def wait_all(self, timeout_s: float = 30.0) -> bool:
        """Wait for every known experiment to reach a terminal state."""
        deadline = time.monotonic() + timeout_s
        for record in self.records():
            remaining = deadline - time.monotonic()
            if remaining <= 0 or not record.terminal.wait(timeout=remaining):
                return False
        return True

    def shutdown(self, cancel_active: bool = True, timeout_s: float = 10.0) -> None:
        if cancel_active:
            for record in self.records():
                if record.state not in TERMINAL_STATES:
                    try:
                        self.cancel(record.experiment_id)
                    except UnknownExperiment:
                        pass
        self.wait_all(timeout_s)
        self._shutdown.set()
        self._notify()
        self._dispatcher.join(timeout=2.0)
        for worker in self._threads:
            worker.join(timeout=2.0)
