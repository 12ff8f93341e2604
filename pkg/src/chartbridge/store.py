"""On-disk and in-memory patient timeline store.

Patients live as one interchange-format bundle file each; loading goes
through the bundle parser so the store sees exactly what the platform would
see. Timelines are immutable once stored.
"""
from __future__ import annotations

from pathlib import Path

from .timeline import PatientTimeline, parse_bundle


class UnknownPatient(KeyError):
    """No timeline stored under that patient id."""


class TimelineStore:
    def __init__(self) -> None:
        self._timelines: dict[str, PatientTimeline] = {}

    def add(self, timeline: PatientTimeline) -> None:
        self._timelines[timeline.patient_id] = timeline

    def get(self, patient_id: str) -> PatientTimeline:
        try:
            return self._timelines[patient_id]
        except KeyError:
            raise UnknownPatient(patient_id) from None

    def __contains__(self, patient_id: str) -> bool:
        return patient_id in self._timelines

    def patient_ids(self) -> list[str]:
        return sorted(self._timelines)

    @classmethod
    def from_dir(cls, directory: str | Path) -> "TimelineStore":
        store = cls()
        for path in sorted(Path(directory).glob("*.json")):
            result = parse_bundle(path.read_bytes())
            store.add(result.timeline)
        return store
