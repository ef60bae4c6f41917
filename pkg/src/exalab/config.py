"""Service configuration.

One JSON file configures everything: pool capacities, core profiles, policy,
plan defaults, channel defaults, time compression and the listen address.
`EXALAB_CONFIG` overrides the path.  Profile throughput means are fixtures
chosen above the default 50 Mbps gate; they are configuration, not measured
ground truth.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .drivers import ChannelState, CoreProfile
from .intent import Catalog, PlanDefaults, Policy
from .resources import ResourceVector

CONFIG_ENV_VAR = "EXALAB_CONFIG"

DEFAULT_POOL_CAPACITY = ResourceVector(cpu_cores=3000, vgpus=30, storage_gb=500_000, chambers=4)

DEFAULT_CORE_PROFILES = {
    "Open5GS": CoreProfile("Open5GS", tcp_mean_mbps=60.0, udp_mean_mbps=72.0,
                           jitter_std_mbps=4.0, provision_delay_ms=1500),
    "Free5GC": CoreProfile("Free5GC", tcp_mean_mbps=70.0, udp_mean_mbps=80.0,
                           jitter_std_mbps=4.0, provision_delay_ms=1800),
    "OAI-CN": CoreProfile("OAI-CN", tcp_mean_mbps=65.0, udp_mean_mbps=75.0,
                          jitter_std_mbps=4.0, provision_delay_ms=2100),
    "Cumucore": CoreProfile("Cumucore", tcp_mean_mbps=75.0, udp_mean_mbps=85.0,
                            jitter_std_mbps=4.0, provision_delay_ms=1200),
}

DEFAULT_APPS = ("iperf3", "ping", "vlc-stream")


@dataclass
class ServiceConfig:
    pool_capacity: ResourceVector = DEFAULT_POOL_CAPACITY
    policy: Policy = field(default_factory=Policy)
    defaults: PlanDefaults = field(default_factory=PlanDefaults)
    catalog: Catalog = field(
        default_factory=lambda: Catalog(cores=dict(DEFAULT_CORE_PROFILES), apps=DEFAULT_APPS)
    )
    channel: ChannelState = field(
        default_factory=lambda: ChannelState(
            bandwidth_mhz=100.0, snr0_db=30.0, attenuation_db=0.0,
            mimo_layers=1, jitter_std_mbps=2.0,
        )
    )
    time_scale: float = 60.0
    node_delay_ms: int = 200
    repository_root: Path = Path("var/exalab")
    host: str = "127.0.0.1"
    port: int = 8000
    clarification_ttl_s: float = 15 * 60
    # fault injection is config-only, never reachable through the API:
    # {"<core-name-or-*>": {"node": "<role-or-node-id>", "message": "..."}}
    fault_injection: dict = field(default_factory=dict)


def _parse_profile(name: str, data: dict) -> CoreProfile:
    return CoreProfile(
        core_name=name,
        tcp_mean_mbps=float(data.get("tcp_mean_mbps", 60.0)),
        udp_mean_mbps=float(data.get("udp_mean_mbps", 70.0)),
        jitter_std_mbps=float(data.get("jitter_std_mbps", 4.0)),
        provision_delay_ms=int(data.get("provision_delay_ms", 1500)),
    )


def config_from_dict(raw: dict) -> ServiceConfig:
    cfg = ServiceConfig()
    if "pool" in raw:
        cfg.pool_capacity = ResourceVector.from_dict(raw["pool"])
    if "policy" in raw:
        p = raw["policy"]
        cfg.policy = Policy(
            max_concurrent_experiments=int(p.get("max_concurrent_experiments", 16)),
            max_runs_per_request=int(p.get("max_runs_per_request", 8)),
            allowed_modalities=frozenset(p.get("allowed_modalities", ["emulation", "in-lab"])),
            per_run_resource_cap=ResourceVector.from_dict(
                p.get("per_run_resource_cap", {"cpu_cores": 512, "vgpus": 8,
                                               "storage_gb": 4000, "chambers": 2})
            ),
        )
    if "defaults" in raw:
        d = raw["defaults"]
        base = PlanDefaults()
        cfg.defaults = PlanDefaults(
            duration_s=int(d.get("duration_s", base.duration_s)),
            interval_s=int(d.get("interval_s", base.interval_s)),
            traffic_kinds=tuple(d.get("traffic_kinds", base.traffic_kinds)),
            seed=int(d.get("seed", base.seed)),
            modality=d.get("modality", base.modality),
            per_run_resources=ResourceVector.from_dict(
                d.get("per_run_resources", base.per_run_resources.as_dict())
            ),
            inlab_core=d.get("inlab_core", base.inlab_core),
            inlab_chambers=int(d.get("inlab_chambers", base.inlab_chambers)),
        )
    if "catalog" in raw:
        c = raw["catalog"]
        cores = {
            name: _parse_profile(name, profile)
            for name, profile in c.get("cores", {}).items()
        } or dict(DEFAULT_CORE_PROFILES)
        apps = tuple(c.get("apps", DEFAULT_APPS))
        cfg.catalog = Catalog(cores=cores, apps=apps)
    if "channel" in raw:
        ch = raw["channel"]
        cfg.channel = ChannelState(
            bandwidth_mhz=float(ch.get("bandwidth_mhz", 100.0)),
            snr0_db=float(ch.get("snr0_db", 30.0)),
            attenuation_db=float(ch.get("attenuation_db", 0.0)),
            mimo_layers=int(ch.get("mimo_layers", 1)),
            jitter_std_mbps=float(ch.get("jitter_std_mbps", 2.0)),
        )
    if "time_scale" in raw:
        cfg.time_scale = float(raw["time_scale"])
        if cfg.time_scale <= 0:
            raise ValueError("time_scale must be > 0")
    if "node_delay_ms" in raw:
        cfg.node_delay_ms = int(raw["node_delay_ms"])
    if "repository_root" in raw:
        cfg.repository_root = Path(raw["repository_root"])
    if "listen" in raw:
        cfg.host = raw["listen"].get("host", cfg.host)
        cfg.port = int(raw["listen"].get("port", cfg.port))
    if "clarification_ttl_s" in raw:
        cfg.clarification_ttl_s = float(raw["clarification_ttl_s"])
    if "fault_injection" in raw:
        cfg.fault_injection = dict(raw["fault_injection"])
    return cfg


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Load the service config file, or defaults when none is given."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return ServiceConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return config_from_dict(raw)
