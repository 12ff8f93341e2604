"""Seeded synthetic patient generator.

Emits interchange-format bundle files so every flow in the repo runs with no
clinical data: the same seed always produces the same bundles, byte for
byte. Content is invented boilerplate, not derived from any real record.
"""
from __future__ import annotations

import base64
import json
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

COMPLAINTS = (
    "intermittent chest discomfort on exertion",
    "progressive shortness of breath",
    "chronic lower back pain",
    "recurrent migraine headaches",
    "poorly controlled blood glucose",
    "persistent dry cough",
    "bilateral knee osteoarthritis pain",
    "fatigue and unintentional weight loss",
)

MEDICATIONS = (
    ("lisinopril", "10 mg daily"),
    ("metformin", "500 mg twice daily"),
    ("atorvastatin", "40 mg nightly"),
    ("albuterol inhaler", "2 puffs as needed"),
    ("omeprazole", "20 mg daily"),
    ("sertraline", "50 mg daily"),
)

LABS = (
    ("hemoglobin A1c", "%", 5.0, 9.5),
    ("creatinine", "mg/dL", 0.6, 1.8),
    ("potassium", "mmol/L", 3.4, 5.2),
    ("hemoglobin", "g/dL", 10.5, 16.5),
    ("troponin I", "ng/mL", 0.0, 0.3),
)

PROCEDURES = (
    "transthoracic echocardiogram",
    "colonoscopy with biopsy",
    "right knee arthrocentesis",
    "cardiac stress test",
)

ORDERS = (
    "chest radiograph, two views",
    "physical therapy referral",
    "home oxygen evaluation",
    "outpatient cardiology follow-up",
)

AUTHORS = ("attending physician", "hospitalist", "nurse practitioner", "case manager")

NOTE_TEMPLATE = (
    "Patient seen today for {complaint}. Symptoms began approximately {weeks} "
    "weeks ago and are {trend}. Current regimen includes {medication} {dose}. "
    "Examination shows {finding}. Plan: {plan}."
)

FINDINGS = (
    "no acute distress and stable vital signs",
    "mild bilateral lower extremity edema",
    "clear lung fields with regular heart rhythm",
    "tenderness to palpation without erythema",
)

PLANS = (
    "continue current therapy and reassess in four weeks",
    "increase dose and obtain follow-up labs",
    "refer to specialty clinic for further evaluation",
    "begin supervised exercise program",
)


def _iso_instant(ts: datetime) -> str:
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def generate_bundle(patient_id: str, rng: random.Random, anchor: datetime | None = None) -> dict:
    """One patient's bundle: notes, medication orders, labs, reports,
    procedures, and orders spread over roughly three years before the anchor."""
    anchor = anchor or datetime(2025, 9, 1, tzinfo=timezone.utc)
    entries: list[dict] = [{"resource": {"resourceType": "Patient", "id": patient_id}}]
    counter = 0

    def when() -> str:
        nonlocal counter
        counter += 1
        offset = timedelta(days=rng.randint(0, 1095), hours=rng.randint(6, 18))
        return _iso_instant(anchor - offset)

    subject = {"reference": f"Patient/{patient_id}"}
    for i in range(rng.randint(3, 6)):
        complaint = rng.choice(COMPLAINTS)
        med, dose = rng.choice(MEDICATIONS)
        body = NOTE_TEMPLATE.format(
            complaint=complaint,
            weeks=rng.randint(1, 12),
            trend=rng.choice(("improving", "stable", "worsening")),
            medication=med,
            dose=dose,
            finding=rng.choice(FINDINGS),
            plan=rng.choice(PLANS),
        )
        entries.append(
            {
                "resource": {
                    "resourceType": "DocumentReference",
                    "id": f"{patient_id}-note-{i}",
                    "subject": subject,
                    "date": when(),
                    "type": {"text": rng.choice(("Progress note", "Consult note", "H&P"))},
                    "author": [{"display": rng.choice(AUTHORS)}],
                    "content": [
                        {
                            "attachment": {
                                "data": base64.b64encode(body.encode("utf-8")).decode("ascii")
                            }
                        }
                    ],
                }
            }
        )
    for i in range(rng.randint(1, 4)):
        med, dose = rng.choice(MEDICATIONS)
        entries.append(
            {
                "resource": {
                    "resourceType": "MedicationRequest",
                    "id": f"{patient_id}-med-{i}",
                    "subject": subject,
                    "authoredOn": when(),
                    "status": "active",
                    "medicationCodeableConcept": {"text": med},
                    "dosageInstruction": [{"text": dose}],
                }
            }
        )
    for i in range(rng.randint(2, 5)):
        name, unit, low, high = rng.choice(LABS)
        entries.append(
            {
                "resource": {
                    "resourceType": "Observation",
                    "id": f"{patient_id}-lab-{i}",
                    "subject": subject,
                    "effectiveDateTime": when(),
                    "status": "final",
                    "code": {"text": name},
                    "valueQuantity": {"value": round(rng.uniform(low, high), 2), "unit": unit},
                }
            }
        )
    for i in range(rng.randint(0, 2)):
        entries.append(
            {
                "resource": {
                    "resourceType": "DiagnosticReport",
                    "id": f"{patient_id}-report-{i}",
                    "subject": subject,
                    "effectiveDateTime": when(),
                    "status": "final",
                    "code": {"text": "imaging report"},
                    "conclusion": rng.choice(
                        (
                            "No acute cardiopulmonary abnormality.",
                            "Degenerative changes without acute findings.",
                            "Mild interval improvement from prior study.",
                        )
                    ),
                }
            }
        )
    for i in range(rng.randint(0, 2)):
        entries.append(
            {
                "resource": {
                    "resourceType": "Procedure",
                    "id": f"{patient_id}-proc-{i}",
                    "subject": subject,
                    "performedDateTime": when(),
                    "status": "completed",
                    "code": {"text": rng.choice(PROCEDURES)},
                }
            }
        )
    for i in range(rng.randint(0, 2)):
        entries.append(
            {
                "resource": {
                    "resourceType": "ServiceRequest",
                    "id": f"{patient_id}-order-{i}",
                    "subject": subject,
                    "authoredOn": when(),
                    "status": "active",
                    "code": {"text": rng.choice(ORDERS)},
                }
            }
        )
    return {"resourceType": "Bundle", "type": "collection", "entry": entries}


def write_bundles(n: int, seed: int, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(1, n + 1):
        patient_id = f"P{i:04d}"
        bundle = generate_bundle(patient_id, random.Random((seed, patient_id).__repr__()))
        path = out / f"{patient_id}.json"
        path.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(path)
    return paths
