"""Machine-readable experiment descriptors.

A descriptor freezes everything needed to reproduce one experiment:
component versions, network topology, (simulated) hardware identifiers and
configuration parameters.  Descriptors are content-addressed: the id is the
SHA-256 of the canonical serialization of every other field, so equal
configurations always collide onto the same id and any edit produces a new
one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any

from .errors import ValidationError

SCHEMA_VERSION = "1.0.0"

MODALITIES = ("simulation", "emulation", "in-lab", "outdoors")
NODE_ROLES = ("ue", "gnb", "core", "dnn", "app-server", "chamber")

# Roles that must appear in the topology before the matching driver will
# accept the descriptor.
REQUIRED_ROLES = {
    "emulation": frozenset({"ue", "gnb", "core", "dnn"}),
    "in-lab": frozenset({"ue", "gnb", "core", "chamber"}),
}

DESCRIPTOR_FILE_SUFFIX = ".exac.json"


@dataclass(frozen=True)
class TopologyNode:
    node_id: str
    role: str
    implementation: str


@dataclass(frozen=True)
class TopologyLink:
    src: str
    dst: str
    kind: str


@dataclass(frozen=True)
class Violation:
    path: str
    message: str


@dataclass(frozen=True)
class ExperimentDescriptor:
    schema_version: str
    software_versions: dict[str, str]
    nodes: tuple[TopologyNode, ...]
    links: tuple[TopologyLink, ...]
    hardware_identifiers: dict[str, str]
    configuration: dict[str, Any]
    modality: str
    created_at: datetime
    descriptor_id: str = ""

    def core_implementations(self) -> list[str]:
        return [n.implementation for n in self.nodes if n.role == "core"]


@dataclass(frozen=True)
class DescriptorDiff:
    changed: tuple[tuple[str, Any, Any], ...]
    added: tuple[str, ...]
    removed: tuple[str, ...]

    def is_empty(self) -> bool:
        return not (self.changed or self.added or self.removed)


def _format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc).replace(microsecond=0)
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_timestamp(text: str) -> datetime:
    # Python 3.10's fromisoformat does not accept a trailing Z.
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)


def _payload(d: ExperimentDescriptor) -> dict[str, Any]:
    """Canonical field tree, descriptor_id excluded."""
    return {
        "schema_version": d.schema_version,
        "software_versions": dict(d.software_versions),
        "network_topology": {
            "nodes": [
                {"node_id": n.node_id, "role": n.role, "implementation": n.implementation}
                for n in d.nodes
            ],
            "links": [{"src": l.src, "dst": l.dst, "kind": l.kind} for l in d.links],
        },
        "hardware_identifiers": dict(d.hardware_identifiers),
        "configuration": dict(d.configuration),
        "modality": d.modality,
        "created_at": _format_timestamp(d.created_at),
    }


def _encode(payload: dict[str, Any]) -> bytes:
    # Sorted keys, no insignificant whitespace, raw UTF-8.  Python's float
    # repr is already the shortest round-trip decimal form.
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def _hash_payload(payload: dict[str, Any]) -> str:
    return hashlib.sha256(_encode(payload)).hexdigest()


def validate(d: ExperimentDescriptor) -> list[Violation]:
    """Collect every invariant violation; an empty list means valid."""
    out: list[Violation] = []
    if d.schema_version != SCHEMA_VERSION:
        out.append(Violation("schema_version", f"unknown schema version {d.schema_version!r}"))
    if d.modality not in MODALITIES:
        out.append(Violation("modality", f"{d.modality!r} not one of {MODALITIES}"))

    seen: set[str] = set()
    for i, node in enumerate(d.nodes):
        if not node.node_id:
            out.append(Violation(f"network_topology.nodes[{i}].node_id", "node_id is empty"))
        elif node.node_id in seen:
            out.append(
                Violation(f"network_topology.nodes[{i}].node_id", f"duplicate node_id {node.node_id!r}")
            )
        seen.add(node.node_id)
        if node.role not in NODE_ROLES:
            out.append(
                Violation(f"network_topology.nodes[{i}].role", f"{node.role!r} not one of {NODE_ROLES}")
            )
    for i, link in enumerate(d.links):
        for end, name in ((link.src, "src"), (link.dst, "dst")):
            if end not in seen:
                out.append(
                    Violation(f"network_topology.links[{i}].{name}", f"unknown node {end!r}")
                )

    required = REQUIRED_ROLES.get(d.modality, frozenset())
    present = {n.role for n in d.nodes}
    missing = sorted(required - present)
    if missing:
        out.append(
            Violation("network_topology", f"missing required roles for {d.modality}: {', '.join(missing)}")
        )

    cfg = d.configuration
    duration = cfg.get("duration_s")
    interval = cfg.get("interval_s")
    if not isinstance(duration, (int, float)) or duration <= 0:
        out.append(Violation("configuration.duration_s", "duration_s must be > 0"))
    if not isinstance(interval, (int, float)) or interval <= 0:
        out.append(Violation("configuration.interval_s", "interval_s must be > 0"))
    if (
        isinstance(duration, (int, float))
        and isinstance(interval, (int, float))
        and interval > 0
        and duration > 0
        and interval > duration
    ):
        out.append(Violation("configuration.interval_s", "interval_s must not exceed duration_s"))

    if d.descriptor_id:
        expected = _hash_payload(_payload(d))
        if d.descriptor_id != expected:
            out.append(
                Violation("descriptor_id", "descriptor_id does not match the content hash")
            )
    return out


def _require_valid(d: ExperimentDescriptor) -> None:
    violations = validate(d)
    if violations:
        detail = "; ".join(f"{v.path}: {v.message}" for v in violations)
        raise ValidationError(f"invalid descriptor: {detail}", list(violations))


def canonicalize(d: ExperimentDescriptor) -> bytes:
    """Deterministic byte form of the descriptor, descriptor_id excluded."""
    _require_valid(d)
    return _encode(_payload(d))


def hash_descriptor(d: ExperimentDescriptor) -> str:
    """Lowercase hex SHA-256 of the canonical bytes."""
    return hashlib.sha256(canonicalize(d)).hexdigest()


def seal(d: ExperimentDescriptor) -> ExperimentDescriptor:
    """Return a copy whose descriptor_id is the content hash of the rest."""
    unsealed = replace(d, descriptor_id="")
    return replace(d, descriptor_id=hash_descriptor(unsealed))


def _flatten(value: Any, prefix: str, out: dict[str, Any]) -> None:
    if isinstance(value, dict):
        for key in sorted(value):
            sub = f"{prefix}.{key}" if prefix else str(key)
            _flatten(value[key], sub, out)
    elif isinstance(value, list):
        for i, item in enumerate(value):
            _flatten(item, f"{prefix}[{i}]", out)
    else:
        out[prefix] = value


def diff_descriptors(a: ExperimentDescriptor, b: ExperimentDescriptor) -> DescriptorDiff:
    """Field-path-level diff of the canonical representations."""
    _require_valid(a)
    _require_valid(b)
    flat_a: dict[str, Any] = {}
    flat_b: dict[str, Any] = {}
    _flatten(_payload(a), "", flat_a)
    _flatten(_payload(b), "", flat_b)
    changed = tuple(
        (path, flat_a[path], flat_b[path])
        for path in sorted(flat_a.keys() & flat_b.keys())
        if flat_a[path] != flat_b[path]
    )
    added = tuple(sorted(flat_b.keys() - flat_a.keys()))
    removed = tuple(sorted(flat_a.keys() - flat_b.keys()))
    return DescriptorDiff(changed=changed, added=added, removed=removed)


def to_file_bytes(d: ExperimentDescriptor) -> bytes:
    """The on-disk `.exac.json` form: canonical payload plus descriptor_id."""
    sealed = d if d.descriptor_id else seal(d)
    _require_valid(sealed)
    payload = _payload(sealed)
    payload["descriptor_id"] = sealed.descriptor_id
    return _encode(payload)


def from_payload(payload: dict[str, Any]) -> ExperimentDescriptor:
    topo = payload.get("network_topology", {})
    d = ExperimentDescriptor(
        schema_version=payload["schema_version"],
        software_versions=dict(payload.get("software_versions", {})),
        nodes=tuple(
            TopologyNode(n["node_id"], n["role"], n["implementation"])
            for n in topo.get("nodes", [])
        ),
        links=tuple(
            TopologyLink(l["src"], l["dst"], l["kind"]) for l in topo.get("links", [])
        ),
        hardware_identifiers=dict(payload.get("hardware_identifiers", {})),
        configuration=dict(payload.get("configuration", {})),
        modality=payload["modality"],
        created_at=_parse_timestamp(payload["created_at"]),
        descriptor_id=payload.get("descriptor_id", ""),
    )
    if not d.descriptor_id:
        d = seal(d)
    return d


def from_file_bytes(data: bytes) -> ExperimentDescriptor:
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"not a descriptor file: {exc}") from exc
    d = from_payload(payload)
    _require_valid(d)
    return d
