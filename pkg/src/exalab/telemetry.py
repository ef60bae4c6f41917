"""Trace statistics and KPI evaluation.

Conventions fixed here so golden tests stay exact: population standard
deviation, quartiles by Tukey hinges, and strict comparison for the
"exceeds" / "below" verbs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import EmptyTrace, StorageError, UnitMismatch, UnsupportedMetric, ValidationError

ARCHIVE_SCHEMA_VERSION = "1.0.0"
CSV_HEADER = "t_offset_s,core,traffic,mbps"

TRAFFIC_KINDS = ("tcp", "udp")

METRIC_UNITS = {
    "mean_throughput": "Mbps",
    "p95_latency": "ms",
    "mean_cpu_util": "percent",
}
COMPARATORS = ("exceeds", "below")

# Metrics whose observed value can be read off a TraceSummary.  p95_latency
# would need raw quantiles, and nothing gates latency by default.
GATED_METRICS = ("mean_throughput", "mean_cpu_util")


@dataclass(frozen=True)
class ThroughputTrace:
    experiment_id: str
    core_name: str
    traffic: str
    interval_s: int
    samples: tuple[tuple[int, float], ...]  # (t_offset_s, mbps)
    truncated: bool = False

    def values(self) -> list[float]:
        return [mbps for _, mbps in self.samples]


@dataclass(frozen=True)
class TraceSummary:
    count: int
    mean: float
    std: float
    min: float
    q1: float
    median: float
    q3: float
    max: float

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.max,
        }


@dataclass(frozen=True)
class KpiCriterion:
    metric: str
    comparator: str
    threshold: float
    unit: str
    traffic_kinds: tuple[str, ...] = TRAFFIC_KINDS

    def as_dict(self) -> dict:
        return {
            "metric": self.metric,
            "comparator": self.comparator,
            "threshold": self.threshold,
            "unit": self.unit,
            "traffic_kinds": list(self.traffic_kinds),
        }


@dataclass(frozen=True)
class KpiVerdict:
    criterion: KpiCriterion
    per_run: dict[tuple[str, str], dict]  # (core, traffic) -> {observed, pass}
    overall_pass: bool
    partial: bool

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion.as_dict(),
            "per_run": {
                f"{core}|{traffic}": result
                for (core, traffic), result in sorted(self.per_run.items())
            },
            "overall_pass": self.overall_pass,
            "partial": self.partial,
        }


def _median(xs: list[float]) -> float:
    n = len(xs)
    mid = n // 2
    if n % 2:
        return xs[mid]
    return (xs[mid - 1] + xs[mid]) / 2.0


def _tukey_hinges(xs: list[float]) -> tuple[float, float]:
    # Halves share the median element when the count is odd.
    n = len(xs)
    if n % 2:
        half = (n + 1) // 2
        return _median(xs[:half]), _median(xs[half - 1:])
    return _median(xs[: n // 2]), _median(xs[n // 2:])


def summarize(trace: ThroughputTrace) -> TraceSummary:
    """Distribution statistics of one trace (population std, Tukey hinges)."""
    return summarize_values(trace.values())


def summarize_values(values: list[float]) -> TraceSummary:
    if not values:
        raise EmptyTrace("cannot summarize an empty trace")
    xs = sorted(values)
    n = len(xs)
    mean = math.fsum(xs) / n
    std = math.sqrt(math.fsum((x - mean) ** 2 for x in xs) / n)
    q1, q3 = _tukey_hinges(xs)
    return TraceSummary(
        count=n,
        mean=mean,
        std=std,
        min=xs[0],
        q1=q1,
        median=_median(xs),
        q3=q3,
        max=xs[-1],
    )


def validate_criterion(criterion: KpiCriterion) -> None:
    if criterion.metric not in METRIC_UNITS:
        raise UnsupportedMetric(f"unknown metric {criterion.metric!r}")
    if criterion.comparator not in COMPARATORS:
        raise ValidationError(f"unknown comparator {criterion.comparator!r}")
    if criterion.threshold <= 0:
        raise ValidationError("threshold must be > 0")
    expected = METRIC_UNITS[criterion.metric]
    if criterion.unit != expected:
        raise UnitMismatch(
            f"metric {criterion.metric} is measured in {expected}, not {criterion.unit}"
        )


def observed_value(summary: TraceSummary, metric: str) -> float:
    if metric not in GATED_METRICS:
        raise UnsupportedMetric(f"metric {metric!r} has no gated evaluation path")
    return summary.mean


def evaluate_kpi(
    summaries: dict[tuple[str, str], TraceSummary],
    criterion: KpiCriterion,
    expected_pairs: set[tuple[str, str]] | None = None,
) -> KpiVerdict:
    """Compare each run against the criterion; strict inequality both ways.

    `expected_pairs` is the (core, traffic) set the plan requested; pairs
    absent from `summaries` (runs that never completed) flip `partial` on and
    the verdict covers the completed runs only.
    """
    validate_criterion(criterion)
    if expected_pairs is None:
        expected_pairs = set(summaries)
    per_run: dict[tuple[str, str], dict] = {}
    for key in sorted(summaries):
        observed = observed_value(summaries[key], criterion.metric)
        if criterion.comparator == "exceeds":
            passed = observed > criterion.threshold
        else:
            passed = observed < criterion.threshold
        per_run[key] = {"observed": observed, "pass": passed}
    return KpiVerdict(
        criterion=criterion,
        per_run=per_run,
        overall_pass=all(r["pass"] for r in per_run.values()),
        partial=bool(expected_pairs - set(summaries)),
    )


def build_archive(
    experiment_id: str,
    descriptor_id: str,
    traces: list[ThroughputTrace],
    summaries: dict[tuple[str, str], TraceSummary],
    verdict: KpiVerdict,
    secondary_series: dict[tuple[str, str], dict[str, list[float]]] | None = None,
) -> bytes:
    """Canonical archive bytes.

    The experiment id is validated against the traces but kept out of the
    stored body, so re-running the same descriptor yields byte-identical
    archives (and therefore the same content address).
    """
    for trace in traces:
        if trace.experiment_id != experiment_id:
            raise ValidationError(
                f"trace for {trace.experiment_id!r} does not belong to {experiment_id!r}"
            )
        if (trace.core_name, trace.traffic) not in summaries:
            raise ValidationError(f"no summary for run {(trace.core_name, trace.traffic)}")
    secondary_series = secondary_series or {}
    runs = []
    for trace in sorted(traces, key=lambda t: (t.core_name, t.traffic)):
        key = (trace.core_name, trace.traffic)
        entry = {
            "core": trace.core_name,
            "traffic": trace.traffic,
            "interval_s": trace.interval_s,
            "truncated": trace.truncated,
            "samples": [[t, mbps] for t, mbps in trace.samples],
            "summary": summaries[key].as_dict(),
        }
        entry.update(secondary_series.get(key, {}))
        runs.append(entry)
    body = {
        "schema_version": ARCHIVE_SCHEMA_VERSION,
        "descriptor_id": descriptor_id,
        "stats_conventions": {"std": "population", "quartiles": "tukey-hinges"},
        "runs": runs,
        "verdict": verdict.as_dict(),
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def archive_metrics(store, experiment_id, descriptor_id, traces, summaries, verdict,
                    secondary_series=None) -> str:
    """Write one metrics archive into the content-addressed store."""
    data = build_archive(
        experiment_id, descriptor_id, traces, summaries, verdict, secondary_series
    )
    try:
        return store.put_object(data)
    except OSError as exc:  # pragma: no cover - disk faults
        raise StorageError(str(exc)) from exc


def archive_to_csv(archive: dict) -> str:
    """Flatten archived raw samples to CSV (`t_offset_s,core,traffic,mbps`)."""
    lines = [CSV_HEADER]
    for run in archive.get("runs", []):
        for t_offset, mbps in run.get("samples", []):
            lines.append(f"{t_offset},{run['core']},{run['traffic']},{mbps}")
    return "\n".join(lines) + "\n"
