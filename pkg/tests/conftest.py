from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

from exalab.config import ServiceConfig
from exalab.intent import ExperimentPlan
from exalab.orchestrator import Orchestrator, build_descriptor
from exalab.resources import ResourceVector
from exalab.telemetry import KpiCriterion

FIXED_TIME = datetime(2026, 8, 10, 12, 0, 0, tzinfo=timezone.utc)

PAPER_REQUEST = (
    "Deploy iperf3 across three 5G cores (Open5GS, Free5GC, OAI-CN) "
    "and verify mean throughput exceeds 50 Mbps"
)


def fast_config(root: Path, **overrides) -> ServiceConfig:
    """Config tuned so measurements take microseconds of wall time."""
    cfg = ServiceConfig()
    cfg.repository_root = root / "repo"
    cfg.time_scale = 1e6
    cfg.node_delay_ms = 1
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def make_plan(
    cores=("Open5GS",),
    duration_s=4,
    interval_s=1,
    seed=7,
    traffic=("tcp", "udp"),
    threshold=50.0,
    modality="emulation",
    per_run=None,
) -> ExperimentPlan:
    return ExperimentPlan(
        app_under_test="iperf3",
        target_cores=tuple(cores),
        kpi=KpiCriterion(
            metric="mean_throughput",
            comparator="exceeds",
            threshold=threshold,
            unit="Mbps",
            traffic_kinds=tuple(sorted(traffic)),
        ),
        modality=modality,
        duration_s=duration_s,
        interval_s=interval_s,
        per_run_resources=per_run or ResourceVector(cpu_cores=8, storage_gb=20,
                                                    chambers=2 if modality == "in-lab" else 0),
        template_overrides={},
        seed=seed,
    )


def make_descriptor(plan: ExperimentPlan, cfg: ServiceConfig | None = None):
    return build_descriptor(plan, cfg or ServiceConfig(), created_at=FIXED_TIME)


@pytest.fixture
def orch(tmp_path):
    orchestrator = Orchestrator(fast_config(tmp_path))
    yield orchestrator
    orchestrator.shutdown()
