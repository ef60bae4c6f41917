"""Searchable, append-only experiment archive.

Objects are stored under their SHA-256 (objects/<first2>/<hash>, written via
temp file + rename) and one line-oriented index file links each experiment
to its descriptor, orchestration log and metrics archive.  Nothing is ever
mutated or deleted.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path

from . import descriptor as descriptor_mod
from .errors import DanglingReference, DuplicateExperiment, NotFound, StorageError

INDEX_SCHEMA = "exalab.bundle/1"

TERMINAL_STATES = ("completed", "failed", "cancelled")


@dataclass(frozen=True)
class ExperimentBundle:
    experiment_id: str
    descriptor_ref: str
    log_ref: str
    metrics_ref: str | None
    state: str
    submitted_at: datetime
    finished_at: datetime

    def as_record(self) -> dict:
        return {
            "schema": INDEX_SCHEMA,
            "experiment_id": self.experiment_id,
            "descriptor_ref": self.descriptor_ref,
            "log_ref": self.log_ref,
            "metrics_ref": self.metrics_ref,
            "state": self.state,
            "submitted_at": _ts(self.submitted_at),
            "finished_at": _ts(self.finished_at),
        }

    @classmethod
    def from_record(cls, record: dict) -> "ExperimentBundle":
        return cls(
            experiment_id=record["experiment_id"],
            descriptor_ref=record["descriptor_ref"],
            log_ref=record["log_ref"],
            metrics_ref=record.get("metrics_ref"),
            state=record["state"],
            submitted_at=_parse_ts(record["submitted_at"]),
            finished_at=_parse_ts(record["finished_at"]),
        )


@dataclass(frozen=True)
class QueryFilter:
    core_name: str | None = None
    modality: str | None = None
    state: str | None = None
    submitted_from: datetime | None = None
    submitted_to: datetime | None = None
    descriptor_ref: str | None = None
    list_all: bool = False

    def is_empty(self) -> bool:
        return not any(
            (
                self.core_name,
                self.modality,
                self.state,
                self.submitted_from,
                self.submitted_to,
                self.descriptor_ref,
            )
        )


@dataclass(frozen=True)
class AuditReport:
    bundles_checked: int
    objects_checked: int
    dangling: tuple[tuple[str, str, str], ...]  # (experiment_id, field, ref)
    orphans: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not self.dangling


def _ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).replace(microsecond=0).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_ts(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)


class Repository:
    """Flat-directory object store plus append-only bundle index."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.index_path = self.root / "index.log"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._bundles: dict[str, ExperimentBundle] = {}
        self._order: list[str] = []
        self._id_counters: dict[str, int] = {}
        self._load_index()

    # -- object store -----------------------------------------------------

    def _object_path(self, ref: str) -> Path:
        return self.objects_dir / ref[:2] / ref

    def put_object(self, data: bytes) -> str:
        """Store immutable bytes; returns the content hash. Idempotent."""
        if not data:
            raise StorageError("refusing to store an empty object")
        ref = sha256(data).hexdigest()
        path = self._object_path(ref)
        if path.exists():
            return ref
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)  # concurrent puts of the same bytes converge
        except OSError as exc:
            raise StorageError(str(exc)) from exc
        return ref

    def get_object(self, ref: str) -> bytes:
        path = self._object_path(ref)
        if not path.exists():
            raise NotFound(f"no object {ref}")
        try:
            return path.read_bytes()
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def has_object(self, ref: str) -> bool:
        return self._object_path(ref).exists()

    # -- index ------------------------------------------------------------

    def _load_index(self) -> None:
        if not self.index_path.exists():
            return
        with self.index_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                bundle = ExperimentBundle.from_record(json.loads(line))
                self._bundles[bundle.experiment_id] = bundle
                self._order.append(bundle.experiment_id)
                self._remember_id(bundle.experiment_id)

    def _remember_id(self, experiment_id: str) -> None:
        # exp-YYYYMMDD-xxxxxx; keep per-day counters monotonic across restarts.
        parts = experiment_id.split("-")
        if len(parts) == 3 and parts[0] == "exp":
            try:
                value = int(parts[2], 16)
            except ValueError:
                return
            day = parts[1]
            self._id_counters[day] = max(self._id_counters.get(day, 0), value)

    def next_experiment_id(self, now: datetime | None = None) -> str:
        """Mint `exp-<UTC date>-<6-hex counter>`; lexicographic within a day
        follows submission order."""
        now = now or datetime.now(timezone.utc)
        day = now.astimezone(timezone.utc).strftime("%Y%m%d")
        with self._lock:
            value = self._id_counters.get(day, 0) + 1
            self._id_counters[day] = value
            return f"exp-{day}-{value:06x}"

    def index_bundle(self, bundle: ExperimentBundle) -> None:
        """Append one bundle row; every ref must already be stored."""
        with self._lock:
            if bundle.experiment_id in self._bundles:
                raise DuplicateExperiment(f"{bundle.experiment_id} already indexed")
            refs = [("descriptor_ref", bundle.descriptor_ref), ("log_ref", bundle.log_ref)]
            if bundle.metrics_ref is not None:
                refs.append(("metrics_ref", bundle.metrics_ref))
            for fieldname, ref in refs:
                if not self.has_object(ref):
                    raise DanglingReference(f"{fieldname} {ref} is not stored")
            line = json.dumps(bundle.as_record(), sort_keys=True, separators=(",", ":"))
            try:
                with self.index_path.open("a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageError(str(exc)) from exc
            self._bundles[bundle.experiment_id] = bundle
            self._order.append(bundle.experiment_id)
            self._remember_id(bundle.experiment_id)

    def lookup(self, experiment_id: str) -> ExperimentBundle | None:
        with self._lock:
            return self._bundles.get(experiment_id)

    def bundles(self) -> list[ExperimentBundle]:
        with self._lock:
            return [self._bundles[i] for i in self._order]

    # -- query ------------------------------------------------------------

    def _descriptor_for(self, bundle: ExperimentBundle) -> descriptor_mod.ExperimentDescriptor:
        return descriptor_mod.from_file_bytes(self.get_object(bundle.descriptor_ref))

    def query(self, f: QueryFilter) -> list[ExperimentBundle]:
        """All bundles matching every set filter field, oldest first."""
        if f.is_empty() and not f.list_all:
            raise ValueError("empty filter: set at least one field or pass list_all")
        out: list[ExperimentBundle] = []
        for bundle in self.bundles():
            if f.state and bundle.state != f.state:
                continue
            if f.descriptor_ref and bundle.descriptor_ref != f.descriptor_ref:
                continue
            if f.submitted_from and bundle.submitted_at < f.submitted_from:
                continue
            if f.submitted_to and bundle.submitted_at > f.submitted_to:
                continue
            if f.core_name or f.modality:
                try:
                    desc = self._descriptor_for(bundle)
                except NotFound:
                    continue
                if f.modality and desc.modality != f.modality:
                    continue
                if f.core_name and f.core_name.lower() not in {
                    c.lower() for c in desc.core_implementations()
                }:
                    continue
            out.append(bundle)
        out.sort(key=lambda b: (b.submitted_at, b.experiment_id))
        return out

    # -- integrity --------------------------------------------------------

    def audit(self) -> AuditReport:
        """Full-scan referential-integrity check."""
        dangling: list[tuple[str, str, str]] = []
        referenced: set[str] = set()
        bundles = self.bundles()
        for bundle in bundles:
            pairs = [("descriptor_ref", bundle.descriptor_ref), ("log_ref", bundle.log_ref)]
            if bundle.metrics_ref is not None:
                pairs.append(("metrics_ref", bundle.metrics_ref))
            for fieldname, ref in pairs:
                referenced.add(ref)
                if not self.has_object(ref):
                    dangling.append((bundle.experiment_id, fieldname, ref))
        stored = {p.name for p in self.objects_dir.glob("*/*") if not p.name.endswith(".tmp")}
        orphans = tuple(sorted(stored - referenced))
        return AuditReport(
            bundles_checked=len(bundles),
            objects_checked=len(stored),
            dangling=tuple(dangling),
            orphans=orphans,
        )
