"""Fixed prompt+data automations over sets of patient records.

An automation is a registered spec: a prompt template, a data selection
(kinds and time range, patient slot left open), a trigger, and an output
channel. The engine batch-executes specs over patient rosters with per-
patient isolation, benchmarks outputs against gold-standard cases, collects
in-workflow feedback, aggregates integrity metrics, and detects drift
between stored record snapshots and a fresh extraction.
"""
from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from .context import DEFAULT_TOKENIZER, TokenizerSpec, build_context
from .gateway import BackendError, ModelGateway, RequestTelemetry
from .sessionlog import _iso, _parse_ts
from .store import TimelineStore, UnknownPatient
from .timeline import ContextSelection, filter_timeline, serialize_for_context

TRIGGERS = ("scheduled", "batch", "on_demand")
OUTPUT_CHANNELS = ("worklist", "file", "api")
COMPARATORS = ("exact", "containment")


class UnknownAutomation(KeyError):
    """Automation id was never registered."""


class EmptyPatientSet(ValueError):
    """A batch needs at least one patient."""


class EmptyDataset(ValueError):
    """Benchmarking needs at least one gold case."""


class NoHistory(ValueError):
    """No job runs recorded for that automation."""


class MissingSnapshot(KeyError):
    """Drift check requested for a patient with no stored snapshot."""


@dataclass(frozen=True)
class AutomationSpec:
    automation_id: str
    name: str
    prompt_template: str  # may reference {patient_id}
    selection_kinds: frozenset[str]
    selection_start: datetime
    selection_end: datetime
    trigger: str = "on_demand"
    interval_s: int = 0  # scheduled trigger period
    preferred_model: str | None = None
    output_channel: str = "worklist"
    comparator: str = "containment"
    roster: tuple[str, ...] = ()  # patients for scheduled runs

    def __post_init__(self) -> None:
        if not self.prompt_template:
            raise ValueError("prompt_template must be non-empty")
        if self.trigger not in TRIGGERS:
            raise ValueError(f"unknown trigger {self.trigger!r}")
        if self.trigger == "scheduled" and self.interval_s <= 0:
            raise ValueError("scheduled automations need interval_s > 0")
        if self.output_channel not in OUTPUT_CHANNELS:
            raise ValueError(f"unknown output_channel {self.output_channel!r}")
        if self.comparator not in COMPARATORS:
            raise ValueError(f"unknown comparator {self.comparator!r}")

    def selection_for(self, patient_id: str) -> ContextSelection:
        return ContextSelection(
            patient_id=patient_id,
            kinds=self.selection_kinds,
            start=self.selection_start,
            end=self.selection_end,
        )


@dataclass(frozen=True)
class GoldStandardCase:
    patient_id: str
    range_start: datetime
    range_end: datetime
    prompt: str
    expert_response: str

    def __post_init__(self) -> None:
        if not (self.patient_id and self.prompt and self.expert_response):
            raise ValueError("gold case fields must all be non-empty")


@dataclass
class PatientResult:
    patient_id: str
    telemetry: RequestTelemetry
    output: str
    status: str  # ok | error


@dataclass
class JobRun:
    job_id: str
    automation_id: str
    started_at: datetime
    finished_at: datetime
    patients: list[PatientResult]
    error_count: int


@dataclass(frozen=True)
class FeedbackRecord:
    automation_id: str
    patient_id: str
    verdict: str  # agree | disagree
    recorded_at: datetime
    note: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in ("agree", "disagree"):
            raise ValueError(f"verdict must be agree/disagree, got {self.verdict!r}")


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def compare_outputs(output: str, expert: str, comparator: str) -> bool:
    if comparator == "exact":
        return output.strip() == expert.strip()
    return _normalize(expert) in _normalize(output)


class AutomationEngine:
    def __init__(
        self,
        store: TimelineStore,
        gateway: ModelGateway,
        tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
        system_prompt: str = "",
        output_dir: str | Path | None = None,
        max_parallel_patients: int = 4,
    ):
        self.store = store
        self.gateway = gateway
        self.tokenizer = tokenizer
        self.system_prompt = system_prompt
        self.output_dir = Path(output_dir) if output_dir else None
        self.max_parallel_patients = max_parallel_patients
        self._specs: dict[str, AutomationSpec] = {}
        self._history: dict[str, list[JobRun]] = {}
        self._feedback: list[FeedbackRecord] = []
        self._gold: dict[str, list[GoldStandardCase]] = {}
        self._snapshots: dict[tuple[str, str], str] = {}
        self._next_due: dict[str, float] = {}
        self._job_counter = 0
        self._lock = threading.Lock()

    # -- registry ------------------------------------------------------------

    def register(self, spec: AutomationSpec) -> None:
        self._specs[spec.automation_id] = spec
        if spec.trigger == "scheduled":
            self._next_due.setdefault(spec.automation_id, 0.0)

    def spec(self, automation_id: str) -> AutomationSpec:
        try:
            return self._specs[automation_id]
        except KeyError:
            raise UnknownAutomation(automation_id) from None

    # -- execution -----------------------------------------------------------

    def _render_context(self, spec: AutomationSpec, patient_id: str) -> str:
        timeline = self.store.get(patient_id)
        return serialize_for_context(filter_timeline(timeline, spec.selection_for(patient_id)))

    def _run_patient(self, spec: AutomationSpec, patient_id: str, job_id: str) -> PatientResult:
        request_id = f"{job_id}-{patient_id}"
        try:
            record_text = self._render_context(spec, patient_id)
            query = spec.prompt_template.replace("{patient_id}", patient_id)
            pkg = build_context(record_text, query, self.system_prompt, self.tokenizer)
            response, telemetry, profile = self.gateway.generate(
                pkg, request_prefix=request_id, prefer=spec.preferred_model
            )
            aggregate = RequestTelemetry(
                request_id=request_id,
                model=profile.name,
                latency_ms=sum(t.latency_ms for t in telemetry),
                tokens_sent=sum(t.tokens_sent for t in telemetry),
                tokens_received=sum(t.tokens_received for t in telemetry),
                cost=sum((t.cost for t in telemetry), Decimal("0")),
            )
            return PatientResult(patient_id, aggregate, response, "ok")
        except (BackendError, UnknownPatient) as exc:
            attempts = exc.telemetry if isinstance(exc, BackendError) else []
            aggregate = RequestTelemetry(
                request_id=request_id,
                model=attempts[0].model if attempts else (spec.preferred_model or ""),
                latency_ms=sum(t.latency_ms for t in attempts),
                tokens_sent=sum(t.tokens_sent for t in attempts),
                tokens_received=0,
                error_code=f"{type(exc).__name__}: {exc}",
            )
            return PatientResult(patient_id, aggregate, "", "error")

    def run_batch(self, automation_id: str, patient_ids: list[str]) -> JobRun:
        """One job over a patient set; a patient failure never takes down the
        job or its siblings. Results are ordered by patient id regardless of
        which worker finished first."""
        spec = self.spec(automation_id)
        if not patient_ids:
            raise EmptyPatientSet(f"automation {automation_id}: no patients given")
        with self._lock:
            self._job_counter += 1
            job_id = f"{automation_id}-job{self._job_counter:04d}"
        ordered = sorted(patient_ids)
        started = datetime.now(timezone.utc)
        if self.max_parallel_patients > 1 and len(ordered) > 1:
            with ThreadPoolExecutor(max_workers=self.max_parallel_patients) as pool:
                results = list(pool.map(lambda pid: self._run_patient(spec, pid, job_id), ordered))
        else:
            results = [self._run_patient(spec, pid, job_id) for pid in ordered]
        job = JobRun(
            job_id=job_id,
            automation_id=automation_id,
            started_at=started,
            finished_at=datetime.now(timezone.utc),
            patients=results,
            error_count=sum(1 for r in results if r.status == "error"),
        )
        self._history.setdefault(automation_id, []).append(job)
        if self.output_dir and spec.output_channel == "worklist":
            self._write_worklist(job)
        return job

    def tick(self, now_s: float) -> list[JobRun]:
        """Simulated scheduler: run every scheduled spec that has come due."""
        runs = []
        for automation_id, due in sorted(self._next_due.items()):
            spec = self._specs[automation_id]
            if spec.trigger == "scheduled" and now_s >= due and spec.roster:
                runs.append(self.run_batch(automation_id, list(spec.roster)))
                self._next_due[automation_id] = now_s + spec.interval_s
        return runs

    def _write_worklist(self, job: JobRun) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / f"{job.job_id}-worklist.jsonl"
        lines = [
            json.dumps(
                {"patient_id": r.patient_id, "status": r.status, "output": r.output},
                sort_keys=True,
                ensure_ascii=False,
            )
            for r in job.patients
        ]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    # -- benchmarking ----------------------------------------------------------

    def evaluate_against_gold(
        self,
        automation_id: str,
        dataset: list[GoldStandardCase] | None = None,
        comparator: str | None = None,
    ) -> dict:
        """Re-run the automation prompt on each gold case's record slice and
        compare with the expert response."""
        spec = self.spec(automation_id)
        cases = dataset if dataset is not None else self._gold.get(automation_id, [])
        if not cases:
            raise EmptyDataset(f"automation {automation_id}: empty gold dataset")
        rule = comparator or spec.comparator
        per_case = []
        matches = 0
        for i, case in enumerate(cases):
            selection = ContextSelection(
                patient_id=case.patient_id,
                kinds=spec.selection_kinds,
                start=case.range_start,
                end=case.range_end,
            )
            try:
                record_text = serialize_for_context(
                    filter_timeline(self.store.get(case.patient_id), selection)
                )
                pkg = build_context(record_text, case.prompt, self.system_prompt, self.tokenizer)
                output, _, _ = self.gateway.generate(
                    pkg, request_prefix=f"{automation_id}-bench{i}", prefer=spec.preferred_model
                )
                matched = compare_outputs(output, case.expert_response, rule)
            except (BackendError, UnknownPatient) as exc:
                output, matched = f"<error: {exc}>", False
            matches += matched
            per_case.append(
                {"patient_id": case.patient_id, "output": output, "matched": matched}
            )
        return {"agreement_rate": matches / len(cases), "per_case": per_case}

    # -- feedback --------------------------------------------------------------

    def record_feedback(self, rec: FeedbackRecord) -> None:
        self.spec(rec.automation_id)
        with self._lock:
            self._feedback.append(rec)

    def feedback_rates(self, automation_id: str) -> dict:
        records = [f for f in self._feedback if f.automation_id == automation_id]
        agree = sum(1 for f in records if f.verdict == "agree")
        total = len(records)
        return {
            "agree": agree,
            "disagree": total - agree,
            "positive_rate": agree / total if total else 0.0,
        }

    def gold_dataset(self, automation_id: str) -> list[GoldStandardCase]:
        return list(self._gold.get(automation_id, []))

    def add_gold_case(self, automation_id: str, case: GoldStandardCase) -> None:
        self.spec(automation_id)
        self._gold.setdefault(automation_id, []).append(case)

    def append_to_gold(self, rec: FeedbackRecord, output: str) -> GoldStandardCase:
        """Promote an adjudicated output into the automation's gold dataset."""
        spec = self.spec(rec.automation_id)
        case = GoldStandardCase(
            patient_id=rec.patient_id,
            range_start=spec.selection_start,
            range_end=spec.selection_end,
            prompt=spec.prompt_template,
            expert_response=output,
        )
        self.add_gold_case(rec.automation_id, case)
        return case

    # -- integrity ---------------------------------------------------------------

    def history(self, automation_id: str) -> list[JobRun]:
        return list(self._history.get(automation_id, []))

    def integrity_report(self, automation_id: str, history: list[JobRun] | None = None) -> dict:
        self.spec(automation_id)
        jobs = history if history is not None else self._history.get(automation_id, [])
        if not jobs:
            raise NoHistory(f"automation {automation_id}: no job history")
        patients = sum(len(j.patients) for j in jobs)
        tokens = sum(r.telemetry.tokens_sent for j in jobs for r in j.patients)
        latency = sum(r.telemetry.latency_ms for j in jobs for r in j.patients)
        return {
            "total_executions": len(jobs),
            "patients": patients,
            "errors": sum(j.error_count for j in jobs),
            "mean_tokens_sent_per_patient": tokens / patients,
            "mean_latency_ms": latency / patients,
        }

    # -- drift ---------------------------------------------------------------------

    def save_snapshot(self, automation_id: str, patient_id: str) -> str:
        spec = self.spec(automation_id)
        text = self._render_context(spec, patient_id)
        self._snapshots[(automation_id, patient_id)] = text
        return text

    def drift_check(self, automation_id: str, patient_ids: list[str]) -> list[str]:
        """Patients whose freshly serialized context differs byte-wise from the
        stored snapshot; upstream data changed under the benchmark."""
        spec = self.spec(automation_id)
        changed = []
        for pid in patient_ids:
            key = (automation_id, pid)
            if key not in self._snapshots:
                raise MissingSnapshot(f"{automation_id}/{pid}")
            if self._render_context(spec, pid) != self._snapshots[key]:
                changed.append(pid)
        return changed


# -- spec / gold file formats -------------------------------------------------


def spec_from_dict(doc: dict) -> AutomationSpec:
    selection = doc["selection"]
    return AutomationSpec(
        automation_id=doc["automation_id"],
        name=doc.get("name", doc["automation_id"]),
        prompt_template=doc["prompt_template"],
        selection_kinds=frozenset(selection["kinds"]),
        selection_start=_parse_ts(selection["start"]),
        selection_end=_parse_ts(selection["end"]),
        trigger=doc.get("trigger", "on_demand"),
        interval_s=doc.get("interval_s", 0),
        preferred_model=doc.get("preferred_model"),
        output_channel=doc.get("output_channel", "worklist"),
        comparator=doc.get("comparator", "containment"),
        roster=tuple(doc.get("roster", ())),
    )


def load_spec_file(path: str | Path) -> AutomationSpec:
    return spec_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_gold_file(path: str | Path) -> list[GoldStandardCase]:
    cases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        cases.append(
            GoldStandardCase(
                patient_id=doc["patient_id"],
                range_start=_parse_ts(doc["range_start"]),
                range_end=_parse_ts(doc["range_end"]),
                prompt=doc["prompt"],
                expert_response=doc["expert_response"],
            )
        )
    return cases


def job_to_dict(job: JobRun) -> dict:
    return {
        "job_id": job.job_id,
        "automation_id": job.automation_id,
        "started_at": _iso(job.started_at),
        "finished_at": _iso(job.finished_at),
        "error_count": job.error_count,
        "patients": [
            {
                "patient_id": r.patient_id,
                "status": r.status,
                "output": r.output,
                "telemetry": {
                    "request_id": r.telemetry.request_id,
                    "model": r.telemetry.model,
                    "latency_ms": r.telemetry.latency_ms,
                    "tokens_sent": r.telemetry.tokens_sent,
                    "tokens_received": r.telemetry.tokens_received,
                    "error_code": r.telemetry.error_code,
                    "cost": str(r.telemetry.cost),
                },
            }
            for r in job.patients
        ],
    }
