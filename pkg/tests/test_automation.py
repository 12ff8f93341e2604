from __future__ import annotations

import json

import pytest

from chartbridge.automation import (
    AutomationEngine,
    AutomationSpec,
    EmptyDataset,
    EmptyPatientSet,
    FeedbackRecord,
    GoldStandardCase,
    JobRun,
    MissingSnapshot,
    NoHistory,
    PatientResult,
    UnknownAutomation,
    compare_outputs,
    job_to_dict,
    load_gold_file,
    load_spec_file,
)
from chartbridge.backends import ScriptedTextBackend
from chartbridge.gateway import ModelGateway, RequestTelemetry
from chartbridge.timeline import parse_bundle

from conftest import bundle_bytes, note_resource, utc


def make_spec(automation_id="hospice-review", **overrides):
    base = dict(
        automation_id=automation_id,
        name="Inpatient hospice criteria review",
        prompt_template="Review the record and state whether the patient may be hospice eligible.",
        selection_kinds=frozenset({"note", "lab_result", "medication_order"}),
        selection_start=utc(2024, 1, 1),
        selection_end=utc(2025, 12, 31),
        trigger="batch",
        output_channel="worklist",
        comparator="containment",
    )
    base.update(overrides)
    return AutomationSpec(**base)


@pytest.fixture
def engine(small_store, registry, tmp_path):
    gateway = ModelGateway(registry, ScriptedTextBackend(default="Potentially eligible; review recommended."))
    eng = AutomationEngine(small_store, gateway, output_dir=tmp_path / "worklists")
    eng.register(make_spec())
    return eng


class TestRunBatch:
    def test_three_patients_no_errors(self, engine):
        job = engine.run_batch("hospice-review", ["P0001", "P0002", "P0003"])
        assert len(job.patients) == 3
        assert job.error_count == 0
        assert all(r.status == "ok" for r in job.patients)

    def test_results_ordered_by_patient_id(self, engine):
        job = engine.run_batch("hospice-review", ["P0003", "P0001", "P0002"])
        assert [r.patient_id for r in job.patients] == ["P0001", "P0002", "P0003"]

    def test_one_failure_isolated(self, small_store, registry, tmp_path):
        # P0002's serialized context is the only one containing its id marker
        backend = ScriptedTextBackend(default="ok", fail_marker="P0002")
        engine = AutomationEngine(small_store, ModelGateway(registry, backend),
                                  output_dir=tmp_path)
        engine.register(make_spec())
        job = engine.run_batch("hospice-review", ["P0001", "P0002", "P0003"])
        assert job.error_count == 1
        by_id = {r.patient_id: r for r in job.patients}
        assert by_id["P0002"].status == "error"
        assert by_id["P0002"].telemetry.error_code
        assert by_id["P0001"].status == by_id["P0003"].status == "ok"

    def test_missing_patient_is_patient_level_error(self, engine):
        job = engine.run_batch("hospice-review", ["P0001", "GHOST"])
        assert job.error_count == 1

    def test_unknown_automation(self, engine):
        with pytest.raises(UnknownAutomation):
            engine.run_batch("nope", ["P0001"])

    def test_empty_patient_set(self, engine):
        with pytest.raises(EmptyPatientSet):
            engine.run_batch("hospice-review", [])

    def test_worklist_written(self, engine, tmp_path):
        job = engine.run_batch("hospice-review", ["P0001"])
        path = engine.output_dir / f"{job.job_id}-worklist.jsonl"
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["patient_id"] == "P0001"

    def test_scheduled_tick(self, small_store, registry, tmp_path):
        backend = ScriptedTextBackend(default="ok")
        engine = AutomationEngine(small_store, ModelGateway(registry, backend), output_dir=tmp_path)
        engine.register(make_spec(automation_id="sched", trigger="scheduled",
                                  interval_s=3600, roster=("P0001", "P0002")))
        first = engine.tick(0.0)
        assert len(first) == 1 and len(first[0].patients) == 2
        assert engine.tick(1800.0) == []  # not due yet
        assert len(engine.tick(3600.0)) == 1


class TestEvaluateAgainstGold:
    def _gold(self, n, expert="review recommended"):
        return [
            GoldStandardCase(
                patient_id=f"P{(i % 3) + 1:04d}",
                range_start=utc(2024, 1, 1),
                range_end=utc(2025, 12, 31),
                prompt="Hospice eligible?",
                expert_response=expert,
            )
            for i in range(n)
        ]

    def test_nineteen_of_twenty(self, engine):
        cases = self._gold(19) + self._gold(1, expert="entirely different answer")
        result = engine.evaluate_against_gold("hospice-review", cases)
        assert result["agreement_rate"] == 0.95

    def test_zero_matches(self, engine):
        result = engine.evaluate_against_gold("hospice-review", self._gold(5, expert="no match here"))
        assert result["agreement_rate"] == 0.0

    def test_identical_outputs_all_match(self, engine):
        cases = self._gold(4, expert="Potentially eligible; review recommended.")
        result = engine.evaluate_against_gold("hospice-review", cases, comparator="exact")
        assert result["agreement_rate"] == 1.0

    def test_empty_dataset(self, engine):
        with pytest.raises(EmptyDataset):
            engine.evaluate_against_gold("hospice-review", [])

    def test_comparators(self):
        assert compare_outputs("The Patient IS Eligible.", "patient is eligible", "containment")
        assert not compare_outputs("eligible", "patient is eligible", "containment")
        assert compare_outputs(" x ", "x", "exact")
        assert not compare_outputs("x y", "x", "exact")


class TestFeedback:
    def test_agree_increments_positive(self, engine):
        engine.record_feedback(FeedbackRecord("hospice-review", "P0001", "agree", utc(2025, 9, 1)))
        assert engine.feedback_rates("hospice-review") == {
            "agree": 1, "disagree": 0, "positive_rate": 1.0,
        }

    def test_hospice_row_arithmetic(self, engine):
        for i in range(13):
            engine.record_feedback(FeedbackRecord("hospice-review", f"P{i:04d}", "agree", utc(2025, 9, 1)))
        for i in range(3):
            engine.record_feedback(FeedbackRecord("hospice-review", f"P{i:04d}", "disagree", utc(2025, 9, 2)))
        rates = engine.feedback_rates("hospice-review")
        assert rates["positive_rate"] * 100 == 81.25

    def test_append_then_evaluate_grows_dataset(self, engine):
        before = len(engine.gold_dataset("hospice-review"))
        rec = FeedbackRecord("hospice-review", "P0001", "agree", utc(2025, 9, 1))
        engine.record_feedback(rec)
        engine.append_to_gold(rec, "Potentially eligible; review recommended.")
        dataset = engine.gold_dataset("hospice-review")
        assert len(dataset) == before + 1
        result = engine.evaluate_against_gold("hospice-review")
        assert result["agreement_rate"] == 1.0

    def test_unknown_automation_rejected(self, engine):
        with pytest.raises(UnknownAutomation):
            engine.record_feedback(FeedbackRecord("ghost", "P0001", "agree", utc(2025, 9, 1)))


def synthetic_job(job_id, automation_id, latencies_ms, tokens=(), errors=0):
    patients = []
    tokens = tokens or [1000] * len(latencies_ms)
    for i, (lat, tok) in enumerate(zip(latencies_ms, tokens)):
        status = "error" if i < errors else "ok"
        patients.append(
            PatientResult(
                patient_id=f"P{i:04d}",
                telemetry=RequestTelemetry(
                    request_id=f"{job_id}-P{i:04d}", model="m", latency_ms=lat,
                    tokens_sent=tok, tokens_received=50,
                    error_code="backend_error" if status == "error" else None,
                ),
                output="" if status == "error" else "out",
                status=status,
            )
        )
    return JobRun(job_id, automation_id, utc(2025, 9, 1), utc(2025, 9, 1, 1),
                  patients, errors)


class TestIntegrityReport:
    def test_counts(self, engine):
        jobs = [
            synthetic_job("j1", "hospice-review", [100] * 5, errors=1),
            synthetic_job("j2", "hospice-review", [100] * 5),
        ]
        report = engine.integrity_report("hospice-review", jobs)
        assert report["total_executions"] == 2
        assert report["patients"] == 10
        assert report["errors"] == 1

    def test_latency_format_row(self, engine):
        jobs = [synthetic_job("j1", "hospice-review", [600_000, 617_000])]
        report = engine.integrity_report("hospice-review", jobs)
        assert report["mean_latency_ms"] / 1000 == 608.5

    def test_tokens_per_patient_row(self, engine):
        jobs = [synthetic_job("j1", "hospice-review", [1] * 170, tokens=[20_509] * 170)]
        report = engine.integrity_report("hospice-review", jobs)
        assert report["mean_tokens_sent_per_patient"] == 20_509

    def test_no_history(self, engine):
        with pytest.raises(NoHistory):
            engine.integrity_report("hospice-review")

    def test_matches_brute_force_over_live_jobs(self, engine):
        engine.run_batch("hospice-review", ["P0001", "P0002"])
        engine.run_batch("hospice-review", ["P0001", "P0002", "P0003"])
        jobs = engine.history("hospice-review")
        report = engine.integrity_report("hospice-review")
        patients = [r for j in jobs for r in j.patients]
        assert report["total_executions"] == len(jobs)
        assert report["patients"] == len(patients)
        assert report["errors"] == sum(j.error_count for j in jobs)
        assert report["mean_tokens_sent_per_patient"] == (
            sum(r.telemetry.tokens_sent for r in patients) / len(patients)
        )


class TestDriftCheck:
    def test_unchanged_store_empty(self, engine):
        engine.save_snapshot("hospice-review", "P0001")
        assert engine.drift_check("hospice-review", ["P0001"]) == []

    def test_new_note_in_range_detected(self, engine, small_store):
        engine.save_snapshot("hospice-review", "P0001")
        engine.save_snapshot("hospice-review", "P0002")
        raw = bundle_bytes(
            note_resource("P0001-n0", "P0001", "2025-01-10T09:00:00Z",
                          "Baseline visit for patient P0001. Stable on current therapy."),
            note_resource("P0001-new", "P0001", "2025-06-01T09:00:00Z", "A brand new note."),
            patient="P0001",
        )
        small_store.add(parse_bundle(raw).timeline)
        assert engine.drift_check("hospice-review", ["P0001", "P0002"]) == ["P0001"]

    def test_missing_snapshot(self, engine):
        with pytest.raises(MissingSnapshot):
            engine.drift_check("hospice-review", ["P0003"])


class TestSpecFiles:
    def test_round_trip(self, tmp_path):
        doc = {
            "automation_id": "referral-extract",
            "name": "Extract key data for referrals",
            "prompt_template": "Extract the referral reason and urgent findings.",
            "selection": {
                "kinds": ["note", "referral_document"],
                "start": "2024-01-01T00:00:00Z",
                "end": "2025-12-31T00:00:00Z",
            },
            "trigger": "batch",
            "output_channel": "worklist",
            "comparator": "containment",
        }
        path = tmp_path / "referral-extract.json"
        path.write_text(json.dumps(doc))
        spec = load_spec_file(path)
        assert spec.automation_id == "referral-extract"
        assert spec.selection_kinds == frozenset({"note", "referral_document"})

    def test_gold_file_round_trip(self, tmp_path):
        lines = [
            json.dumps({
                "patient_id": "P0001",
                "range_start": "2024-01-01T00:00:00Z",
                "range_end": "2025-01-01T00:00:00Z",
                "prompt": "Eligible?",
                "expert_response": "yes",
            })
        ]
        path = tmp_path / "gold.jsonl"
        path.write_text("\n".join(lines) + "\n")
        cases = load_gold_file(path)
        assert len(cases) == 1
        assert cases[0].expert_response == "yes"

    def test_job_serialization(self):
        job = synthetic_job("j1", "a", [5, 6])
        doc = job_to_dict(job)
        assert doc["job_id"] == "j1"
        assert len(doc["patients"]) == 2
        json.dumps(doc)  # JSON-ready

    def test_scheduled_spec_needs_interval(self):
        with pytest.raises(ValueError):
            make_spec(trigger="scheduled", interval_s=0)
