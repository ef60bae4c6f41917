"""Infrastructure drivers behind one interface.

Two concrete simulated drivers: an emulated-core benchmark driver that
synthesizes iperf-style per-second throughput, and an in-lab OTA driver
whose throughput follows a Shannon-capacity channel model with programmable
attenuation.  Real-hardware modalities (simulation, outdoors) are stubs.

Every trace is a pure function of (descriptor, seed, attenuation schedule):
sample streams are drawn from generators seeded by hashing the descriptor
seed with the core name, traffic kind and series name.
"""

from __future__ import annotations

import hashlib
import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .descriptor import ExperimentDescriptor, TopologyNode
from .errors import HandleTornDown, ProvisionFault, RangeError, WrongDriverKind
from .resources import Lease
from .telemetry import ThroughputTrace

EMULATED_CORE = "emulated-core"
SIM_OTA = "sim-ota"
STUB = "stub"

DRIVER_KIND_BY_MODALITY = {
    "emulation": EMULATED_CORE,
    "in-lab": SIM_OTA,
    "simulation": STUB,
    "outdoors": STUB,
}

ATTENUATION_MAX_DB = 120.0

# Wall-clock cost of bringing up one simulated node, before time scaling.
DEFAULT_NODE_DELAY_MS = 200

# Synthetic baselines for the secondary series (archived, never gated).
LATENCY_BASE_MS = 12.0
LATENCY_STD_MS = 1.5
CPU_BASE_PCT = 35.0
CPU_STD_PCT = 5.0


@dataclass(frozen=True)
class CoreProfile:
    core_name: str
    tcp_mean_mbps: float
    udp_mean_mbps: float
    jitter_std_mbps: float = 4.0
    provision_delay_ms: int = 1500

    def mean_for(self, traffic: str) -> float:
        return self.tcp_mean_mbps if traffic == "tcp" else self.udp_mean_mbps


@dataclass
class ChannelState:
    bandwidth_mhz: float = 100.0
    snr0_db: float = 30.0
    attenuation_db: float = 0.0
    mimo_layers: int = 1
    jitter_std_mbps: float = 0.0

    def copy(self) -> "ChannelState":
        return ChannelState(
            self.bandwidth_mhz,
            self.snr0_db,
            self.attenuation_db,
            self.mimo_layers,
            self.jitter_std_mbps,
        )


def channel_throughput(c: ChannelState) -> float:
    """Shannon capacity in Mbps: layers * bandwidth * log2(1 + linear SNR).

    log1p keeps the tail accurate when attenuation pushes the SNR near zero.
    """
    snr_linear = 10.0 ** ((c.snr0_db - c.attenuation_db) / 10.0)
    return c.mimo_layers * c.bandwidth_mhz * math.log1p(snr_linear) / math.log(2.0)


def _derive_rng(seed: int, *labels: str) -> random.Random:
    material = ":".join([str(seed), *labels]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


def _positive_gauss(rng: random.Random, mean: float, std: float) -> float:
    # Truncated normal at 0: redraw below zero (mean is always positive, so
    # this terminates fast; practically never triggers with fixture stds).
    if std <= 0:
        return mean
    value = rng.gauss(mean, std)
    while value < 0:
        value = rng.gauss(mean, std)
    return value


def sample_count(duration_s: int, interval_s: int) -> int:
    return -(-duration_s // interval_s)  # ceil


class DriverHandle:
    """One provisioned run; owned by a single lifecycle task."""

    driver_kind = STUB

    def __init__(self, handle_id: str, experiment_id: str,
                 topology: tuple[TopologyNode, ...], seed: int,
                 core_name: str, time_scale: float, log: Callable[[str], None],
                 on_teardown: Callable[[], None] | None = None):
        self.handle_id = handle_id
        self.experiment_id = experiment_id
        self.topology = topology
        self.seed = seed
        self.core_name = core_name
        self.time_scale = time_scale
        self.channel_state: ChannelState | None = None
        self.secondary: dict[tuple[str, str], dict[str, list[float]]] = {}
        self._log = log
        self._on_teardown = on_teardown
        self._torn_down = False
        self._lock = threading.Lock()

    @property
    def torn_down(self) -> bool:
        return self._torn_down

    def _ensure_live(self) -> None:
        if self._torn_down:
            raise HandleTornDown(f"handle {self.handle_id} is torn down")

    def _throughput_sample(self, rng: random.Random, traffic: str) -> float:
        raise NotImplementedError

    def run_measurement(self, traffic: str, duration_s: int, interval_s: int,
                        cancel: threading.Event | None = None,
                        on_sample: Callable[[int, float], None] | None = None) -> ThroughputTrace:
        """Produce one sample per interval; returns a truncated partial trace
        if the cancel signal fires mid-run."""
        self._ensure_live()
        if interval_s <= 0 or duration_s < interval_s:
            raise ValueError("duration_s must be >= interval_s > 0")
        rng = _derive_rng(self.seed, self.core_name, traffic, "throughput")
        rng_lat = _derive_rng(self.seed, self.core_name, traffic, "latency")
        rng_cpu = _derive_rng(self.seed, self.core_name, traffic, "cpu")
        samples: list[tuple[int, float]] = []
        latency: list[float] = []
        cpu: list[float] = []
        truncated = False
        for i in range(sample_count(duration_s, interval_s)):
            if cancel is not None and cancel.is_set():
                truncated = True
                break
            self._ensure_live()
            time.sleep(interval_s / self.time_scale)
            t_offset = min(duration_s, (i + 1) * interval_s)
            mbps = self._throughput_sample(rng, traffic)
            samples.append((t_offset, mbps))
            latency.append(max(0.1, rng_lat.gauss(LATENCY_BASE_MS, LATENCY_STD_MS)))
            cpu.append(min(100.0, max(0.0, rng_cpu.gauss(CPU_BASE_PCT, CPU_STD_PCT))))
            if on_sample is not None:
                on_sample(t_offset, mbps)
        self.secondary[(self.core_name, traffic)] = {"latency_ms": latency, "cpu_pct": cpu}
        return ThroughputTrace(
            experiment_id=self.experiment_id,
            core_name=self.core_name,
            traffic=traffic,
            interval_s=interval_s,
            samples=tuple(samples),
            truncated=truncated,
        )

    def set_attenuation(self, value_db: float) -> ChannelState:
        raise WrongDriverKind(f"{self.driver_kind} driver has no programmable attenuation")

    def teardown(self) -> None:
        """Destroy all simulated components; idempotent."""
        with self._lock:
            if self._torn_down:
                return
            self._torn_down = True
        if self._on_teardown is not None:
            self._on_teardown()
        self._log(f"handle {self.handle_id}: all components destroyed")


class EmulatedCoreHandle(DriverHandle):
    driver_kind = EMULATED_CORE

    def __init__(self, *args, profile: CoreProfile, **kwargs):
        super().__init__(*args, **kwargs)
        self.profile = profile

    def _throughput_sample(self, rng: random.Random, traffic: str) -> float:
        return _positive_gauss(rng, self.profile.mean_for(traffic), self.profile.jitter_std_mbps)


class SimOtaHandle(DriverHandle):
    driver_kind = SIM_OTA

    def __init__(self, *args, channel: ChannelState, **kwargs):
        super().__init__(*args, **kwargs)
        self.channel_state = channel

    def _throughput_sample(self, rng: random.Random, traffic: str) -> float:
        # Read the channel once per sample so mid-run attenuation changes
        # show up on the very next sample.
        with self._lock:
            state = self.channel_state.copy()
        level = channel_throughput(state)
        if state.jitter_std_mbps <= 0:
            return level
        return max(0.0, level + rng.gauss(0.0, state.jitter_std_mbps))

    def set_attenuation(self, value_db: float) -> ChannelState:
        self._ensure_live()
        if not 0.0 <= value_db <= ATTENUATION_MAX_DB:
            raise RangeError(f"attenuation {value_db} dB outside [0, {ATTENUATION_MAX_DB}]")
        with self._lock:
            self.channel_state.attenuation_db = float(value_db)
            state = self.channel_state.copy()
        self._log(f"attenuation set to {value_db} dB")
        return state


class DriverContext:
    """Factory for driver handles; also tracks provision/teardown balance."""

    def __init__(self, profiles: dict[str, CoreProfile], time_scale: float = 60.0,
                 channel_defaults: ChannelState | None = None,
                 fault_plan: dict[str, dict] | None = None,
                 node_delay_ms: int = DEFAULT_NODE_DELAY_MS):
        self.profiles = profiles
        self.time_scale = time_scale
        self.channel_defaults = channel_defaults or ChannelState()
        # fault_plan: core name (or "*") -> {"node": role, "message": str}
        self.fault_plan = fault_plan or {}
        self.node_delay_ms = node_delay_ms
        self._lock = threading.Lock()
        self.provision_count = 0
        self.teardown_count = 0

    def _profile_for(self, core_name: str) -> CoreProfile:
        for name, profile in self.profiles.items():
            if name.lower() == core_name.lower():
                return profile
        raise ProvisionFault("core", f"no profile for core {core_name!r}")

    def _fault_for(self, core_name: str) -> dict | None:
        for key in (core_name, "*"):
            entry = self.fault_plan.get(key)
            if entry:
                return entry
        return None

    def _instantiate(self, descriptor: ExperimentDescriptor, core_name: str,
                     order: list[str], log: Callable[[str], None]) -> list[TopologyNode]:
        fault = self._fault_for(core_name)
        profile = self._profile_for(core_name)
        by_role: dict[str, list[TopologyNode]] = {}
        for node in descriptor.nodes:
            by_role.setdefault(node.role, []).append(node)
        up: list[TopologyNode] = []
        for role in order:
            candidates = by_role.get(role, [])
            if role == "core":
                candidates = [n for n in candidates if n.implementation.lower() == core_name.lower()]
            for node in candidates:
                delay_ms = profile.provision_delay_ms if role == "core" else self.node_delay_ms
                time.sleep(delay_ms / 1000.0 / self.time_scale)
                if fault and fault.get("node") in (node.role, node.node_id):
                    log(f"fault while instantiating {node.node_id}: {fault.get('message', 'injected fault')}")
                    up.clear()  # zero residual components on fault
                    raise ProvisionFault(node.node_id, fault.get("message", "injected fault"))
                up.append(node)
                log(f"instantiated {node.role} {node.node_id} ({node.implementation})")
        return up

    def provision(self, descriptor: ExperimentDescriptor, lease: Lease,
                  core_name: str | None = None, run_label: str | None = None,
                  log: Callable[[str], None] | None = None) -> DriverHandle:
        """Instantiate the simulated components for one run (core -> gNB ->
        UE -> DNN/app-server) and return a live handle seeded from the
        descriptor configuration.  `run_label` distinguishes repeated runs of
        the same core (it feeds the per-run sample streams and trace names)."""
        log = log or (lambda _msg: None)
        kind = DRIVER_KIND_BY_MODALITY.get(descriptor.modality, STUB)
        if kind == STUB:
            raise ProvisionFault("driver", f"driver not implemented for modality {descriptor.modality!r}")

        cores = descriptor.core_implementations()
        if core_name is None:
            if len(cores) != 1:
                raise ProvisionFault("core", "descriptor has multiple cores; pass core_name")
            core_name = cores[0]
        elif core_name.lower() not in {c.lower() for c in cores}:
            raise ProvisionFault("core", f"core {core_name!r} not in descriptor topology")

        seed = int(descriptor.configuration.get("seed", 0))
        run_label = run_label or core_name
        handle_id = f"{lease.experiment_id}/{run_label}"

        def note_teardown():
            with self._lock:
                self.teardown_count += 1

        if kind == EMULATED_CORE:
            order = ["core", "gnb", "ue", "dnn", "app-server"]
            up = self._instantiate(descriptor, core_name, order, log)
            handle: DriverHandle = EmulatedCoreHandle(
                handle_id, lease.experiment_id, tuple(up), seed, run_label,
                self.time_scale, log, on_teardown=note_teardown,
                profile=self._profile_for(core_name),
            )
        else:
            order = ["chamber", "core", "gnb", "ue", "app-server"]
            up = self._instantiate(descriptor, core_name, order, log)
            cfg = descriptor.configuration
            channel = ChannelState(
                bandwidth_mhz=float(cfg.get("bandwidth_mhz", self.channel_defaults.bandwidth_mhz)),
                snr0_db=float(cfg.get("snr0_db", self.channel_defaults.snr0_db)),
                attenuation_db=float(cfg.get("attenuation_db", self.channel_defaults.attenuation_db)),
                mimo_layers=int(cfg.get("mimo_layers", self.channel_defaults.mimo_layers)),
                jitter_std_mbps=float(cfg.get("jitter_std_mbps", self.channel_defaults.jitter_std_mbps)),
            )
            handle = SimOtaHandle(
                handle_id, lease.experiment_id, tuple(up), seed, run_label,
                self.time_scale, log, on_teardown=note_teardown, channel=channel,
            )
        with self._lock:
            self.provision_count += 1
        return handle
