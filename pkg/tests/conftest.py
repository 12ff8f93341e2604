from __future__ import annotations

import base64
import json
import random
import time
from datetime import datetime, timezone
from decimal import Decimal

import pytest

from chartbridge.backends import ScriptedTextBackend
from chartbridge.gateway import ModelGateway, ModelProfile
from chartbridge.store import TimelineStore
from chartbridge.timeline import parse_bundle


def utc(year, month, day, hour=0, minute=0, second=0):
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def note_resource(rid, subject, date, body, title="Progress note", author="attending physician"):
    return {
        "resourceType": "DocumentReference",
        "id": rid,
        "subject": {"reference": f"Patient/{subject}"},
        "date": date,
        "type": {"text": title},
        "author": [{"display": author}],
        "content": [{"attachment": {"data": base64.b64encode(body.encode()).decode()}}],
    }


def lab_resource(rid, subject, date, name="potassium", value=4.1, unit="mmol/L"):
    return {
        "resourceType": "Observation",
        "id": rid,
        "subject": {"reference": f"Patient/{subject}"},
        "effectiveDateTime": date,
        "status": "final",
        "code": {"text": name},
        "valueQuantity": {"value": value, "unit": unit},
    }


def med_resource(rid, subject, date, med="lisinopril", dose="10 mg daily"):
    return {
        "resourceType": "MedicationRequest",
        "id": rid,
        "subject": {"reference": f"Patient/{subject}"},
        "authoredOn": date,
        "status": "active",
        "medicationCodeableConcept": {"text": med},
        "dosageInstruction": [{"text": dose}],
    }


def bundle_bytes(*resources, patient=None):
    entries = []
    if patient:
        entries.append({"resource": {"resourceType": "Patient", "id": patient}})
    entries.extend({"resource": r} for r in resources)
    return json.dumps({"resourceType": "Bundle", "entry": entries}).encode()


@pytest.fixture
def registry():
    return [
        ModelProfile("small-8k", 8_000, Decimal("0.0005"), Decimal("0.0015")),
        ModelProfile("mid-128k", 128_000, Decimal("0.002"), Decimal("0.008")),
        ModelProfile("big-1m", 1_000_000, Decimal("0.004"), Decimal("0.016")),
    ]


@pytest.fixture
def echo_backend():
    return ScriptedTextBackend(default="OK")


@pytest.fixture
def gateway(registry, echo_backend):
    return ModelGateway(registry, echo_backend)


@pytest.fixture
def small_store():
    """Three patients with a couple of notes and labs each, fixed dates."""
    store = TimelineStore()
    for i, pid in enumerate(("P0001", "P0002", "P0003")):
        raw = bundle_bytes(
            note_resource(f"{pid}-n0", pid, "2025-01-10T09:00:00Z",
                          f"Baseline visit for patient {pid}. Stable on current therapy."),
            note_resource(f"{pid}-n1", pid, f"2025-03-0{i+1}T10:30:00Z",
                          "Follow-up visit. Symptoms improving with treatment."),
            lab_resource(f"{pid}-l0", pid, "2025-02-14T08:00:00Z"),
            med_resource(f"{pid}-m0", pid, "2025-01-12T12:00:00Z"),
            patient=pid,
        )
        store.add(parse_bundle(raw).timeline)
    return store


class DelayedBackend:
    """Wraps a backend with small seeded-random delays so concurrent chunk
    requests complete in shuffled order."""

    def __init__(self, inner, seed=0, max_delay_ms=4):
        self.inner = inner
        self.rng = random.Random(seed)
        self.max_delay_ms = max_delay_ms

    def complete(self, system_prompt, user_content):
        time.sleep(self.rng.uniform(0, self.max_delay_ms) / 1000.0)
        return self.inner.complete(system_prompt, user_content)
