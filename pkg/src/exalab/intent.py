"""Natural-language request interpretation and admission gating.

A deterministic grammar recognizes the request family

    Deploy <app> across <core-list> ... verify <kpi> exceeds|stays below
    <number> <unit>

with free clause order, case-insensitive core matching against the installed
catalog, and optional overrides (duration, interval, seed, traffic kinds,
per-run resources, run count, channel parameters).  Interpretation never
denies: informational gaps become clarification questions, and only the gate
turns capacity or policy violations into a denial.

An external model client with the same request -> draft contract can replace
the grammar (see `interpret`'s `external` hook); drafts are re-validated
against the catalog either way.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable

from .drivers import CoreProfile
from .errors import StateError
from .resources import ResourceVector
from .telemetry import METRIC_UNITS, KpiCriterion

APPROVED = "approved"
CLARIFICATION_REQUIRED = "clarification_required"
DENIED = "denied"

MODALITY_DEFAULT = "emulation"

_COUNT_WORDS = {
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
}
_CORE_FILLER = _COUNT_WORDS | {"the", "all", "these", "those", "following", "5g", "core", "cores"}

_UNIT_ALIASES = {
    "mbps": "Mbps", "mbit/s": "Mbps", "mb/s": "Mbps",
    "ms": "ms", "millisecond": "ms", "milliseconds": "ms",
    "%": "percent", "percent": "percent",
}


@dataclass(frozen=True)
class Catalog:
    """Installed cores and deployable applications."""

    cores: dict[str, CoreProfile]
    apps: tuple[str, ...]

    def resolve_core(self, name: str) -> str | None:
        for canonical in self.cores:
            if canonical.lower() == name.lower():
                return canonical
        return None

    def resolve_app(self, name: str) -> str | None:
        for canonical in self.apps:
            if canonical.lower() == name.lower():
                return canonical
        return None


@dataclass(frozen=True)
class PlanDefaults:
    duration_s: int = 120
    interval_s: int = 1
    traffic_kinds: tuple[str, ...] = ("tcp", "udp")
    seed: int = 1
    modality: str = MODALITY_DEFAULT
    per_run_resources: ResourceVector = ResourceVector(cpu_cores=8, storage_gb=20)
    inlab_core: str = "Free5GC"
    inlab_chambers: int = 2


@dataclass(frozen=True)
class ExperimentPlan:
    app_under_test: str
    target_cores: tuple[str, ...]
    kpi: KpiCriterion
    modality: str
    duration_s: int
    interval_s: int
    per_run_resources: ResourceVector
    template_overrides: dict = field(default_factory=dict)
    seed: int = 1

    @property
    def runs(self) -> int:
        return len(self.target_cores)

    def single_core(self, core: str) -> "ExperimentPlan":
        return replace(self, target_cores=(core,))


@dataclass(frozen=True)
class Policy:
    max_concurrent_experiments: int = 16
    max_runs_per_request: int = 8
    allowed_modalities: frozenset[str] = frozenset({"emulation", "in-lab"})
    per_run_resource_cap: ResourceVector = ResourceVector(
        cpu_cores=512, vgpus=8, storage_gb=4000, chambers=2
    )


@dataclass(frozen=True)
class Question:
    field: str
    prompt: str


@dataclass
class PlanDraft:
    """Partial parse carried across clarification rounds."""

    app: str | None = None
    app_unknown: str | None = None
    cores: list[str] = field(default_factory=list)
    unknown_cores: list[str] = field(default_factory=list)
    metric: str | None = None
    metric_unsupported: str | None = None
    comparator: str | None = None
    threshold: float | None = None
    unit: str | None = None
    unit_mismatch: str | None = None
    traffic: tuple[str, ...] | None = None
    duration_s: int | None = None
    interval_s: int | None = None
    seed: int | None = None
    modality: str | None = None
    runs_per_core: int = 1
    per_run_overrides: dict = field(default_factory=dict)
    template_overrides: dict = field(default_factory=dict)


@dataclass
class IntentDecision:
    kind: str
    plan: ExperimentPlan | None = None
    questions: list[Question] = field(default_factory=list)
    reason: str | None = None
    draft: PlanDraft | None = None  # internal dialogue state, not exposed

    @classmethod
    def approved(cls, plan: ExperimentPlan) -> "IntentDecision":
        return cls(kind=APPROVED, plan=plan)

    @classmethod
    def clarification(cls, questions: list[Question], draft: PlanDraft) -> "IntentDecision":
        return cls(kind=CLARIFICATION_REQUIRED, questions=questions, draft=draft)

    @classmethod
    def denied(cls, reason: str) -> "IntentDecision":
        return cls(kind=DENIED, reason=reason)


# -- extractors ------------------------------------------------------------

_APP_RE = re.compile(
    r"\b(?:deploy|run|launch|benchmark|test)\s+(?:the\s+|my\s+|an?\s+)?([A-Za-z0-9<][\w.+<>-]*)",
    re.IGNORECASE,
)
_PAREN_AFTER_CORES_RE = re.compile(r"cores?\s*\(([^)]+)\)", re.IGNORECASE)
_PAREN_RE = re.compile(r"\(([^)]+)\)")
_ACROSS_RE = re.compile(
    r"\b(?:across|against|on)\s+(.+?)"
    r"(?=\band\s+(?:verify|ensure|check|validate)\b|\b(?:verify|ensure|check|validate|with|using|every|seed|logged)\b|\bfor\s+\d|[.;]|$)",
    re.IGNORECASE,
)
_EXCEEDS_RE = re.compile(
    r"\b(?:exceeds?|(?:stays?|is|remains?)\s+above|above|at\s+least|greater\s+than|more\s+than)\b"
    r"(?:\s+(?:an?\s+|the\s+)?threshold(?:\s+of)?)?\s*(\d+(?:\.\d+)?)?\s*([A-Za-z%][\w/%]*)?",
    re.IGNORECASE,
)
_BELOW_RE = re.compile(
    r"\b(?:(?:stays?|is|remains?)\s+below|below|under|less\s+than)\b"
    r"(?:\s+(?:an?\s+|the\s+)?threshold(?:\s+of)?)?\s*(\d+(?:\.\d+)?)?\s*([A-Za-z%][\w/%]*)?",
    re.IGNORECASE,
)
_BARE_THRESHOLD_RE = re.compile(
    r"(?:threshold\s+(?:of\s+)?)?(\d+(?:\.\d+)?)\s*(mbps|mbit/s|mb/s|ms|milliseconds?|%|percent)?\b",
    re.IGNORECASE,
)
_DURATION_RE = re.compile(
    r"\b(?:for|duration\s+(?:of\s+)?)\s*(\d+)\s*(seconds?|secs?|s|minutes?|mins?|m)\b",
    re.IGNORECASE,
)
_INTERVAL_RE = re.compile(
    r"\b(?:every|each)\s+(?:(\d+)\s*)?(seconds?|secs?|s)\b", re.IGNORECASE
)
_SEED_RE = re.compile(r"\bseed\s+(?:of\s+)?(\d+)\b", re.IGNORECASE)
_RUNS_RE = re.compile(r"\b(\d+)\s+runs?\s+per\s+core\b", re.IGNORECASE)
_PER_RUN_RES_RE = {
    "cpu_cores": re.compile(r"\b(\d+)\s+cpu\s+cores?\s+per\s+run\b", re.IGNORECASE),
    "vgpus": re.compile(r"\b(\d+)\s+vgpus?\s+per\s+run\b", re.IGNORECASE),
    "storage_gb": re.compile(r"\b(\d+)\s*gb\s+(?:of\s+)?storage\s+per\s+run\b", re.IGNORECASE),
    "chambers": re.compile(r"\b(\d+)\s+chambers?\s+per\s+run\b", re.IGNORECASE),
}
_BANDWIDTH_RE = re.compile(r"\b(\d+(?:\.\d+)?)\s*mhz\b", re.IGNORECASE)
_MIMO_N_RE = re.compile(r"\b(?:mimo\s+(\d+)|(\d+)x\d+\s+mimo|(\d+)\s+mimo\s+layers?)\b", re.IGNORECASE)
_MIMO_RE = re.compile(r"\bmimo\b", re.IGNORECASE)
_ATTEN_RE = re.compile(r"\battenuation\s+(?:of\s+)?(\d+(?:\.\d+)?)\s*db\b", re.IGNORECASE)
_SNR_RE = re.compile(r"\bsnr0?\s+(?:of\s+)?(-?\d+(?:\.\d+)?)\s*db\b", re.IGNORECASE)


def _normalize_unit(raw: str | None) -> str | None:
    if not raw:
        return None
    return _UNIT_ALIASES.get(raw.lower())


def _extract_app(text: str, catalog: Catalog, draft: PlanDraft) -> None:
    m = _APP_RE.search(text)
    if not m:
        return
    candidate = m.group(1)
    resolved = catalog.resolve_app(candidate)
    if resolved:
        draft.app = resolved
        draft.app_unknown = None
    else:
        draft.app_unknown = candidate


def _core_items(text: str) -> list[str]:
    m = _PAREN_AFTER_CORES_RE.search(text) or _PAREN_RE.search(text)
    if m:
        raw = m.group(1)
    else:
        m2 = _ACROSS_RE.search(text)
        if not m2:
            return []
        raw = m2.group(1)
    items: list[str] = []
    for piece in re.split(r",|;|/|\band\b|&", raw, flags=re.IGNORECASE):
        words = [w for w in piece.strip().split() if w.lower() not in _CORE_FILLER]
        for word in words:
            cleaned = word.strip(".,;:")
            if cleaned and not cleaned.isdigit():
                items.append(cleaned)
    return items


def _extract_cores(text: str, catalog: Catalog, draft: PlanDraft) -> None:
    resolved: list[str] = []
    unknown: list[str] = []
    for item in _core_items(text):
        canonical = catalog.resolve_core(item)
        if canonical and canonical not in resolved:
            resolved.append(canonical)
        elif not canonical and item not in unknown:
            unknown.append(item)
    if resolved:
        draft.cores = resolved
    if unknown or resolved:
        draft.unknown_cores = unknown


def _extract_kpi(text: str, draft: PlanDraft) -> None:
    lowered = text.lower()
    if "throughput" in lowered:
        draft.metric = "mean_throughput"
        draft.metric_unsupported = None
    elif "cpu" in lowered:
        draft.metric = "mean_cpu_util"
        draft.metric_unsupported = None
    elif "latency" in lowered:
        draft.metric_unsupported = "latency"

    comparator = None
    m = _EXCEEDS_RE.search(text)
    if m:
        comparator = "exceeds"
    else:
        m = _BELOW_RE.search(text)
        if m:
            comparator = "below"
    if comparator:
        draft.comparator = comparator
        if m.group(1) is not None:
            draft.threshold = float(m.group(1))
            unit = _normalize_unit(m.group(2))
            if m.group(2) and unit is None:
                draft.unit_mismatch = m.group(2)
            else:
                draft.unit = unit


def _extract_threshold_answer(text: str, draft: PlanDraft) -> None:
    m = _BARE_THRESHOLD_RE.search(text)
    if m:
        draft.threshold = float(m.group(1))
        unit = _normalize_unit(m.group(2))
        if unit:
            draft.unit = unit
            draft.unit_mismatch = None


def _extract_overrides(text: str, draft: PlanDraft) -> None:
    m = _DURATION_RE.search(text)
    if m:
        value = int(m.group(1))
        if m.group(2).lower().startswith("m"):
            value *= 60
        draft.duration_s = value
    m = _INTERVAL_RE.search(text)
    if m:
        draft.interval_s = int(m.group(1)) if m.group(1) else 1
    m = _SEED_RE.search(text)
    if m:
        draft.seed = int(m.group(1))
    m = _RUNS_RE.search(text)
    if m:
        draft.runs_per_core = max(1, int(m.group(1)))
    for axis, pattern in _PER_RUN_RES_RE.items():
        m = pattern.search(text)
        if m:
            draft.per_run_overrides[axis] = int(m.group(1))

    lowered = text.lower()
    if "tcp only" in lowered:
        draft.traffic = ("tcp",)
    elif "udp only" in lowered:
        draft.traffic = ("udp",)
    else:
        mentioned = tuple(k for k in ("tcp", "udp") if k in lowered)
        if len(mentioned) == 1:
            draft.traffic = mentioned

    if re.search(r"\boutdoors?\b", lowered):
        draft.modality = "outdoors"
    elif re.search(r"\b(?:in-lab|in\s+the\s+lab|over[- ]the[- ]air|ota|anechoic|chambers?)\b", lowered):
        draft.modality = "in-lab"
    elif re.search(r"\b(?:in\s+simulation|ns-3|simulation)\b", lowered):
        draft.modality = "simulation"

    m = _BANDWIDTH_RE.search(text)
    if m:
        draft.template_overrides["bandwidth_mhz"] = float(m.group(1))
    m = _MIMO_N_RE.search(text)
    if m:
        layers = next(g for g in m.groups() if g)
        draft.template_overrides["mimo_layers"] = int(layers)
    elif _MIMO_RE.search(text):
        draft.template_overrides.setdefault("mimo_layers", 2)
    m = _ATTEN_RE.search(text)
    if m:
        draft.template_overrides["attenuation_db"] = float(m.group(1))
    m = _SNR_RE.search(text)
    if m:
        draft.template_overrides["snr0_db"] = float(m.group(1))


# -- decisions ---------------------------------------------------------------

def _default_comparator(metric: str) -> str:
    return "exceeds" if metric == "mean_throughput" else "below"


def _questions_for(draft: PlanDraft, catalog: Catalog) -> list[Question]:
    core_list = ", ".join(catalog.cores)
    out: list[Question] = []
    if draft.app is None:
        if draft.app_unknown:
            out.append(Question(
                "app_under_test",
                f"unknown application {draft.app_unknown!r}; deployable apps: {', '.join(catalog.apps)}",
            ))
        else:
            out.append(Question(
                "app_under_test",
                f"could not identify the application under test; deployable apps: {', '.join(catalog.apps)}",
            ))
    for name in draft.unknown_cores:
        out.append(Question(
            "target_cores", f"unknown core {name!r}; installed cores: {core_list}"
        ))
    if not draft.cores and not draft.unknown_cores and draft.modality != "in-lab":
        out.append(Question(
            "target_cores", f"which 5G cores should be targeted? installed cores: {core_list}"
        ))
    if draft.metric is None:
        if draft.metric_unsupported:
            out.append(Question(
                "kpi.metric",
                "latency KPIs are not gated in this deployment; choose mean throughput (Mbps) "
                "or mean CPU utilization (percent)",
            ))
        else:
            out.append(Question(
                "kpi.metric",
                "which KPI should be verified? supported: mean throughput (Mbps), "
                "mean CPU utilization (percent)",
            ))
    elif draft.threshold is None:
        unit = METRIC_UNITS[draft.metric]
        out.append(Question(
            "kpi.threshold",
            f"what threshold should {draft.metric} be checked against? give value and unit ({unit})",
        ))
    elif draft.unit_mismatch:
        out.append(Question(
            "kpi.unit",
            f"unit {draft.unit_mismatch!r} does not measure {draft.metric}; "
            f"expected {METRIC_UNITS[draft.metric]}",
        ))
    duration = draft.duration_s
    interval = draft.interval_s
    if duration is not None and interval is not None and interval > duration:
        out.append(Question(
            "duration_s",
            f"sample interval {interval}s exceeds duration {duration}s; give a duration >= interval",
        ))
    return out


def _assemble(draft: PlanDraft, defaults: PlanDefaults) -> ExperimentPlan:
    metric = draft.metric
    unit = draft.unit or METRIC_UNITS[metric]
    comparator = draft.comparator or _default_comparator(metric)
    traffic = tuple(sorted(draft.traffic or defaults.traffic_kinds))
    modality = draft.modality or defaults.modality
    per_run = defaults.per_run_resources.as_dict()
    if modality == "in-lab":
        per_run["chambers"] = max(per_run["chambers"], defaults.inlab_chambers)
    per_run.update(draft.per_run_overrides)
    cores = list(draft.cores)
    if not cores and modality == "in-lab":
        cores = [defaults.inlab_core]
    target = tuple(core for core in cores for _ in range(draft.runs_per_core))
    return ExperimentPlan(
        app_under_test=draft.app,
        target_cores=target,
        kpi=KpiCriterion(
            metric=metric,
            comparator=comparator,
            threshold=draft.threshold,
            unit=unit,
            traffic_kinds=traffic,
        ),
        modality=modality,
        duration_s=draft.duration_s if draft.duration_s is not None else defaults.duration_s,
        interval_s=draft.interval_s if draft.interval_s is not None else defaults.interval_s,
        per_run_resources=ResourceVector.from_dict(per_run),
        template_overrides=dict(draft.template_overrides),
        seed=draft.seed if draft.seed is not None else defaults.seed,
    )


def _decide(draft: PlanDraft, catalog: Catalog, defaults: PlanDefaults) -> IntentDecision:
    questions = _questions_for(draft, catalog)
    if questions:
        return IntentDecision.clarification(questions, draft)
    return IntentDecision.approved(_assemble(draft, defaults))


ExternalInterpreter = Callable[[str], PlanDraft]


def interpret(
    request_text: str,
    catalog: Catalog,
    defaults: PlanDefaults | None = None,
    external: ExternalInterpreter | None = None,
) -> IntentDecision:
    """Parse one request into an approved plan or clarification questions.

    Deterministic for identical (request_text, catalog, defaults).  Never
    returns a denial — that is the gate's job.  An `external` interpreter
    (e.g. a model client) may supply the draft; it is re-validated against
    the catalog like any grammar parse.
    """
    if not request_text:
        raise ValueError("request_text must be nonempty")
    defaults = defaults or PlanDefaults()
    if external is not None:
        draft = external(request_text)
        draft.cores = [c for c in draft.cores if catalog.resolve_core(c)]
        if draft.app and not catalog.resolve_app(draft.app):
            draft.app_unknown, draft.app = draft.app, None
    else:
        draft = PlanDraft()
        _extract_overrides(request_text, draft)
        _extract_app(request_text, catalog, draft)
        _extract_cores(request_text, catalog, draft)
        _extract_kpi(request_text, draft)
    return _decide(draft, catalog, defaults)


def merge_clarification(
    previous: IntentDecision,
    answer_text: str,
    catalog: Catalog,
    defaults: PlanDefaults | None = None,
) -> IntentDecision:
    """Fill outstanding fields from an answer and re-check completeness."""
    if previous.kind != CLARIFICATION_REQUIRED or previous.draft is None:
        raise StateError("merge_clarification expects a clarification_required decision")
    defaults = defaults or PlanDefaults()
    draft = previous.draft
    outstanding = {q.field for q in previous.questions}
    if "app_under_test" in outstanding:
        for token in re.findall(r"[A-Za-z0-9][\w.+-]*", answer_text):
            resolved = catalog.resolve_app(token)
            if resolved:
                draft.app = resolved
                draft.app_unknown = None
                break
    if "target_cores" in outstanding:
        found = [
            canonical
            for token in re.findall(r"[A-Za-z0-9][\w.+-]*", answer_text)
            if (canonical := catalog.resolve_core(token))
        ]
        if found:
            merged = [c for c in draft.cores if c not in found] + found
            draft.cores = list(dict.fromkeys(merged))
            draft.unknown_cores = []
    if "kpi.metric" in outstanding:
        _extract_kpi(answer_text, draft)
        if draft.threshold is None:
            _extract_threshold_answer(answer_text, draft)
    if "kpi.threshold" in outstanding or "kpi.unit" in outstanding:
        _extract_threshold_answer(answer_text, draft)
    if "duration_s" in outstanding:
        _extract_overrides(answer_text, draft)
    return _decide(draft, catalog, defaults)


def gate(plan: ExperimentPlan, available: ResourceVector, policy: Policy) -> IntentDecision:
    """Admission decision: approved, or denied naming the first violated rule.

    Check order is fixed (total capacity per axis, run count, modality,
    per-run cap) so the reported reason is deterministic.
    """
    demand = plan.per_run_resources.scaled(plan.runs)
    axis = demand.first_excess_axis(available)
    if axis is not None:
        return IntentDecision.denied(
            f"{axis}: {plan.runs} runs need {getattr(demand, axis)} "
            f"but only {getattr(available, axis)} available"
        )
    if plan.runs > policy.max_runs_per_request:
        return IntentDecision.denied(
            f"max_runs_per_request: {plan.runs} runs exceed the limit of "
            f"{policy.max_runs_per_request}"
        )
    if plan.modality not in policy.allowed_modalities:
        return IntentDecision.denied(
            f"modality: {plan.modality!r} is not allowed by policy "
            f"(allowed: {', '.join(sorted(policy.allowed_modalities))})"
        )
    axis = plan.per_run_resources.first_excess_axis(policy.per_run_resource_cap)
    if axis is not None:
        return IntentDecision.denied(
            f"per_run_resource_cap.{axis}: {getattr(plan.per_run_resources, axis)} "
            f"exceeds the per-run cap of {getattr(policy.per_run_resource_cap, axis)}"
        )
    return IntentDecision.approved(plan)
