"""Service layer: request pipeline, descriptor synthesis, control plane.

The REST handlers and the CLI are thin shells over this class.  All state
lives here (scheduler, repository, clarification dialogues), so several API
instances over one orchestrator answer identically.

An approved request fans out into one experiment per target core: the
three-core benchmark becomes three concurrently executing experiments, each
with its own descriptor, orchestration log and metrics archive.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone

from . import __version__
from . import descriptor as descriptor_mod
from . import intent as intent_mod
from .config import ServiceConfig
from .descriptor import ExperimentDescriptor, TopologyLink, TopologyNode
from .drivers import DriverContext, SIM_OTA
from .errors import StateError, UnknownExperiment, WrongDriverKind
from .intent import ExperimentPlan, IntentDecision
from .repository import ExperimentBundle, QueryFilter, Repository
from .resources import ResourcePool
from .scheduler import COMPLETED, RUNNING, Scheduler


def build_descriptor(plan: ExperimentPlan, config: ServiceConfig,
                     created_at: datetime | None = None) -> ExperimentDescriptor:
    """Synthesize the reproducible descriptor for one plan."""
    created_at = created_at or datetime.now(timezone.utc)
    cores = list(dict.fromkeys(plan.target_cores))
    software = {"orchestrator": f"exalab/{__version__}"}
    nodes: list[TopologyNode] = []
    links: list[TopologyLink] = []
    hardware: dict[str, str] = {"compute": "sim-pool-a"}

    def core_node_id(i: int, name: str) -> str:
        slug = name.lower().replace(" ", "-")
        return "core" if len(cores) == 1 else f"core-{i + 1}-{slug}"

    if plan.modality == "in-lab":
        software["radio"] = "ota-sim/1.0"
        nodes.append(TopologyNode("ue", "ue", "sim-ota"))
        nodes.append(TopologyNode("gnb", "gnb", "sim-ota"))
        nodes.append(TopologyNode("chamber-1", "chamber", "sim-ota"))
        nodes.append(TopologyNode("chamber-2", "chamber", "sim-ota"))
        hardware.update({
            "ue": "sim-ue-001", "gnb": "sim-gnb-001",
            "chamber-1": "anechoic-1", "chamber-2": "anechoic-2",
        })
        links.append(TopologyLink("ue", "gnb", "radio"))
    else:
        software["emulator"] = "ueransim-sim/1.0"
        nodes.append(TopologyNode("ue", "ue", "UERANSIM"))
        nodes.append(TopologyNode("gnb", "gnb", "UERANSIM"))
        nodes.append(TopologyNode("dnn", "dnn", f"sim-vm/{plan.app_under_test}"))
        hardware.update({"ue": "sim-ue-001", "gnb": "sim-gnb-001", "dnn": "sim-vm-001"})
        links.append(TopologyLink("ue", "gnb", "radio"))

    for i, name in enumerate(cores):
        node_id = core_node_id(i, name)
        nodes.append(TopologyNode(node_id, "core", name))
        software[f"core.{name}"] = "sim-1.0"
        hardware[node_id] = f"sim-core-{i + 1:03d}"
        links.append(TopologyLink("gnb", node_id, "backhaul"))
        if plan.modality != "in-lab":
            links.append(TopologyLink(node_id, "dnn", "data"))

    configuration: dict = {
        "app": plan.app_under_test,
        "duration_s": plan.duration_s,
        "interval_s": plan.interval_s,
        "seed": plan.seed,
        "traffic": "+".join(plan.kpi.traffic_kinds),
        "kpi_metric": plan.kpi.metric,
        "kpi_comparator": plan.kpi.comparator,
        "kpi_threshold": float(plan.kpi.threshold),
        "kpi_unit": plan.kpi.unit,
        **plan.per_run_resources.as_dict(),
    }
    if plan.modality == "in-lab":
        ch = config.channel
        overrides = plan.template_overrides
        configuration.update({
            "bandwidth_mhz": float(overrides.get("bandwidth_mhz", ch.bandwidth_mhz)),
            "mimo_layers": int(overrides.get("mimo_layers", ch.mimo_layers)),
            "attenuation_db": float(overrides.get("attenuation_db", ch.attenuation_db)),
            "snr0_db": float(overrides.get("snr0_db", ch.snr0_db)),
            "jitter_std_mbps": float(overrides.get("jitter_std_mbps", ch.jitter_std_mbps)),
        })

    return descriptor_mod.seal(ExperimentDescriptor(
        schema_version=descriptor_mod.SCHEMA_VERSION,
        software_versions=software,
        nodes=tuple(nodes),
        links=tuple(links),
        hardware_identifiers=hardware,
        configuration=configuration,
        modality=plan.modality,
        created_at=created_at,
    ))


@dataclass
class _PendingClarification:
    decision: IntentDecision
    expires_at: float


class Orchestrator:
    """Everything behind the REST surface."""

    def __init__(self, config: ServiceConfig | None = None):
        self.config = config or ServiceConfig()
        self.repository = Repository(self.config.repository_root)
        self.pool = ResourcePool("default", self.config.pool_capacity)
        self.drivers = DriverContext(
            profiles=self.config.catalog.cores,
            time_scale=self.config.time_scale,
            channel_defaults=self.config.channel,
            fault_plan=self.config.fault_injection,
            node_delay_ms=self.config.node_delay_ms,
        )
        self.scheduler = Scheduler(
            self.pool, self.drivers, self.repository, self.config.policy
        )
        self._pending: dict[str, _PendingClarification] = {}
        self._pending_lock = threading.Lock()
        self._submit_lock = threading.Lock()

    # -- intent pipeline ---------------------------------------------------

    def _questions_payload(self, decision: IntentDecision) -> list[dict]:
        return [{"field": q.field, "question": q.prompt} for q in decision.questions]

    def _store_clarification(self, decision: IntentDecision, token: str | None = None) -> str:
        token = token or secrets.token_hex(16)
        with self._pending_lock:
            self._pending[token] = _PendingClarification(
                decision=decision,
                expires_at=time.monotonic() + self.config.clarification_ttl_s,
            )
        return token

    def _take_clarification(self, token: str) -> IntentDecision:
        with self._pending_lock:
            pending = self._pending.get(token)
            if pending is None:
                raise UnknownExperiment(f"unknown clarification token {token!r}")
            if time.monotonic() > pending.expires_at:
                del self._pending[token]
                raise UnknownExperiment(f"clarification token {token!r} expired")
            return pending.decision

    def _launch(self, plan: ExperimentPlan) -> dict:
        decision = intent_mod.gate(plan, self.pool.free(), self.config.policy)
        if decision.kind == intent_mod.DENIED:
            return {"decision": "denied", "reason": decision.reason}
        # One experiment per target core entry; admission is all-or-nothing.
        created_at = datetime.now(timezone.utc)
        items = []
        for core in plan.target_cores:
            single = plan.single_core(core)
            items.append((single, build_descriptor(single, self.config, created_at)))
        with self._submit_lock:
            ids = self.scheduler.submit_many(items)
        return {"decision": "approved", "experiment_ids": ids}

    def submit_request(self, user_request: str) -> dict:
        """interpret -> gate -> descriptor synthesis -> scheduler submit."""
        decision = intent_mod.interpret(
            user_request, self.config.catalog, self.config.defaults
        )
        if decision.kind == intent_mod.CLARIFICATION_REQUIRED:
            token = self._store_clarification(decision)
            return {
                "decision": "clarification_required",
                "clarification_token": token,
                "questions": self._questions_payload(decision),
            }
        return self._launch(decision.plan)

    def answer_clarification(self, token: str, answer_text: str) -> dict:
        previous = self._take_clarification(token)
        decision = intent_mod.merge_clarification(
            previous, answer_text, self.config.catalog, self.config.defaults
        )
        if decision.kind == intent_mod.CLARIFICATION_REQUIRED:
            self._store_clarification(decision, token)  # same token, fresh TTL
            return {
                "decision": "clarification_required",
                "clarification_token": token,
                "questions": self._questions_payload(decision),
            }
        with self._pending_lock:
            self._pending.pop(token, None)
        return self._launch(decision.plan)

    # -- observation ---------------------------------------------------------

    def get_status(self, experiment_id: str) -> dict:
        try:
            return self.scheduler.get(experiment_id).snapshot()
        except UnknownExperiment:
            bundle = self.repository.lookup(experiment_id)
            if bundle is None:
                raise
            status = bundle.as_record()
            status["descriptor"] = self._descriptor_payload(bundle)
            return status

    def get_descriptor_file(self, experiment_id: str) -> bytes:
        try:
            record = self.scheduler.get(experiment_id)
            return descriptor_mod.to_file_bytes(record.descriptor)
        except UnknownExperiment:
            bundle = self.repository.lookup(experiment_id)
            if bundle is None:
                raise
            desc = descriptor_mod.from_file_bytes(self.repository.get_object(bundle.descriptor_ref))
            return descriptor_mod.to_file_bytes(desc)

    def _descriptor_payload(self, bundle: ExperimentBundle) -> dict:
        import json

        desc = descriptor_mod.from_file_bytes(self.repository.get_object(bundle.descriptor_ref))
        return json.loads(descriptor_mod.to_file_bytes(desc))

    def get_results(self, experiment_id: str) -> dict:
        """The archived metrics of a completed experiment."""
        import json

        metrics_ref: str | None
        try:
            record = self.scheduler.get(experiment_id)
            state = record.state
            metrics_ref = record.metrics_ref
        except UnknownExperiment:
            bundle = self.repository.lookup(experiment_id)
            if bundle is None:
                raise
            state = bundle.state
            metrics_ref = bundle.metrics_ref
        if state != COMPLETED or metrics_ref is None:
            raise StateError(f"results not available: experiment is {state}")
        archive = json.loads(self.repository.get_object(metrics_ref))
        archive["experiment_id"] = experiment_id
        archive["metrics_ref"] = metrics_ref
        return archive

    def gate_wait(self, experiment_id: str, timeout_s: float) -> str:
        return self.scheduler.gate_wait(experiment_id, timeout_s)

    def cancel(self, experiment_id: str) -> dict:
        return self.scheduler.cancel(experiment_id)

    def set_attenuation(self, experiment_id: str, value_db: float) -> dict:
        record = self.scheduler.get(experiment_id)
        if record.driver_kind != SIM_OTA:
            raise WrongDriverKind(
                f"experiment {experiment_id} uses {record.driver_kind}, not {SIM_OTA}"
            )
        if record.state != RUNNING:
            raise StateError(f"attenuation can only be steered while running "
                             f"(state is {record.state})")
        states = [h.set_attenuation(value_db) for h in record.handles.values()]
        state = states[-1]
        record.emit("attenuation", attenuation_db=state.attenuation_db)
        return {
            "experiment_id": experiment_id,
            "attenuation_db": state.attenuation_db,
            "bandwidth_mhz": state.bandwidth_mhz,
            "snr0_db": state.snr0_db,
            "mimo_layers": state.mimo_layers,
        }

    def subscribe(self, experiment_id: str):
        return self.scheduler.get(experiment_id).subscribe()

    def unsubscribe(self, experiment_id: str, q) -> None:
        try:
            self.scheduler.get(experiment_id).unsubscribe(q)
        except UnknownExperiment:
            pass

    # -- repository ------------------------------------------------------------

    def query(self, f: QueryFilter) -> list[dict]:
        return [b.as_record() for b in self.repository.query(f)]

    def list_experiments(self) -> list[dict]:
        """Live records merged with archived bundles from earlier runs."""
        out: dict[str, dict] = {}
        for bundle in self.repository.bundles():
            out[bundle.experiment_id] = bundle.as_record()
        for record in self.scheduler.records():
            snap = record.snapshot()
            out[record.experiment_id] = {
                "experiment_id": snap["experiment_id"],
                "state": snap["state"],
                "modality": snap["modality"],
                "target_cores": snap["target_cores"],
                "submitted_at": snap["submitted_at"],
                "finished_at": snap["finished_at"],
                "descriptor_id": snap["descriptor_id"],
            }
        return sorted(out.values(), key=lambda r: r["experiment_id"])

    def audit(self) -> dict:
        report = self.repository.audit()
        return {
            "bundles_checked": report.bundles_checked,
            "objects_checked": report.objects_checked,
            "dangling": [list(item) for item in report.dangling],
            "orphans": list(report.orphans),
            "clean": report.clean,
        }

    def shutdown(self) -> None:
        self.scheduler.shutdown()
