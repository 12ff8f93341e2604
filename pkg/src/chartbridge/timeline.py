"""Parse clinical bundles into a canonical, time-ordered patient timeline.

The interchange format is a JSON bundle of resources. Each recognized
resource type maps to exactly one entry kind; anything else is skipped and
counted. Records that arrive outside the bundle format (referral letters,
exchange documents from other institutions) enter through ingest_native.

Serialized context format (bit-exact):
    one block per entry, blocks joined by a blank line, trailing newline;
    each block is a header line
        [KIND | ISO-8601-UTC timestamp | title | author_role | source]
    (missing optional fields render as "-"), then one "key: value" line per
    structured field in key order, then the body if present.
"""
from __future__ import annotations

import base64
import binascii
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

ENTRY_KINDS = (
    "note",
    "medication_order",
    "lab_result",
    "diagnostic_report",
    "procedure",
    "order",
    "external_hie",
    "referral_document",
)

NATIVE_KINDS = ("referral_document", "external_hie")

# Resource type -> entry kind. Covers the data types the platform loads:
# notes, medication orders, lab results, diagnostic reports, procedures, orders.
RESOURCE_KIND_MAP = {
    "DocumentReference": "note",
    "MedicationRequest": "medication_order",
    "Observation": "lab_result",
    "DiagnosticReport": "diagnostic_report",
    "Procedure": "procedure",
    "ServiceRequest": "order",
}


class MalformedDocument(ValueError):
    """Bundle bytes are not a syntactically valid interchange document."""


class MissingPatientId(ValueError):
    """Bundle carries clinical resources but no subject reference."""


class UndecodableDocument(ValueError):
    """Native document is empty or not decodable as text."""


class PatientMismatch(ValueError):
    """Selection addressed to a different patient than the timeline."""


@dataclass(frozen=True)
class ResourceEntry:
    entry_id: str
    kind: str
    occurred_at: datetime  # always timezone-aware UTC
    body: str = ""
    structured: dict[str, str] = field(default_factory=dict)
    title: str | None = None
    author_role: str | None = None
    source: str = "internal"  # internal | external

    def __post_init__(self) -> None:
        if self.kind not in ENTRY_KINDS:
            raise ValueError(f"unknown entry kind {self.kind!r}")
        if self.occurred_at.tzinfo is None:
            raise ValueError("occurred_at must be timezone-aware")
        if not self.body and not self.structured:
            raise ValueError(f"entry {self.entry_id}: body and structured both empty")


@dataclass(frozen=True)
class PatientTimeline:
    patient_id: str
    entries: tuple[ResourceEntry, ...] = ()

    def __post_init__(self) -> None:
        ids = [e.entry_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate entry_id in timeline")
        keys = [(e.occurred_at, e.entry_id) for e in self.entries]
        if keys != sorted(keys):
            raise ValueError("timeline entries must be sorted by (occurred_at, entry_id)")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ContextSelection:
    patient_id: str
    kinds: frozenset[str]
    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ValueError("selection needs at least one kind")
        unknown = set(self.kinds) - set(ENTRY_KINDS)
        if unknown:
            raise ValueError(f"unknown kinds in selection: {sorted(unknown)}")
        if self.start > self.end:
            raise ValueError("selection start must be <= end")


def all_kinds_selection(patient_id: str, start: datetime, end: datetime) -> ContextSelection:
    return ContextSelection(patient_id=patient_id, kinds=frozenset(ENTRY_KINDS), start=start, end=end)


@dataclass(frozen=True)
class BundleParseResult:
    timeline: PatientTimeline
    skipped: int  # unrecognized resource types
    warnings: tuple[str, ...] = ()  # per-entry rejections (missing timestamp, dup id)


def _parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _subject_id(resource: dict) -> str | None:
    ref = (resource.get("subject") or {}).get("reference")
    if isinstance(ref, str) and ref:
        return ref.split("/")[-1]
    return None


_TIMESTAMP_FIELDS = (
    "date",
    "authoredOn",
    "effectiveDateTime",
    "performedDateTime",
    "issued",
)


def _resource_timestamp(resource: dict) -> datetime | None:
    for name in _TIMESTAMP_FIELDS:
        value = resource.get(name)
        if isinstance(value, str) and value:
            try:
                return _parse_timestamp(value)
            except ValueError:
                return None
    return None


def _code_text(resource: dict, *fields: str) -> str | None:
    for name in fields:
        node = resource.get(name)
        if isinstance(node, dict):
            text = node.get("text")
            if isinstance(text, str) and text:
                return text
        elif isinstance(node, str) and node:
            return node
    return None


def _note_body(resource: dict) -> str:
    for content in resource.get("content") or []:
        attachment = (content or {}).get("attachment") or {}
        data = attachment.get("data")
        if isinstance(data, str) and data:
            try:
                return base64.b64decode(data, validate=True).decode("utf-8")
            except (binascii.Error, UnicodeDecodeError):
                return ""
    text = resource.get("text")
    if isinstance(text, dict) and isinstance(text.get("div"), str):
        return text["div"]
    return resource.get("description") or ""


def _observation_structured(resource: dict) -> dict[str, str]:
    structured: dict[str, str] = {}
    quantity = resource.get("valueQuantity")
    if isinstance(quantity, dict):
        if "value" in quantity:
            structured["value"] = str(quantity["value"])
        if quantity.get("unit"):
            structured["unit"] = str(quantity["unit"])
    if isinstance(resource.get("valueString"), str):
        structured["value"] = resource["valueString"]
    ref = resource.get("referenceRange")
    if isinstance(ref, list) and ref and isinstance(ref[0], dict) and ref[0].get("text"):
        structured["reference_range"] = str(ref[0]["text"])
    if resource.get("status"):
        structured["status"] = str(resource["status"])
    return structured


def _author_role(resource: dict) -> str | None:
    authors = resource.get("author")
    if isinstance(authors, list) and authors and isinstance(authors[0], dict):
        display = authors[0].get("display")
        if isinstance(display, str) and display:
            return display
    return None


def _entry_from_resource(resource: dict, kind: str, entry_id: str, occurred_at: datetime) -> ResourceEntry:
    title = _code_text(resource, "type", "code", "category")
    body = ""
    structured: dict[str, str] = {}
    if kind == "note":
        body = _note_body(resource)
        title = title or "Note"
    elif kind == "medication_order":
        med = _code_text(resource, "medicationCodeableConcept") or "medication"
        structured = {"medication": med}
        if resource.get("status"):
            structured["status"] = str(resource["status"])
        dosage = resource.get("dosageInstruction")
        if isinstance(dosage, list) and dosage and isinstance(dosage[0], dict) and dosage[0].get("text"):
            structured["dosage"] = str(dosage[0]["text"])
        title = title or med
    elif kind == "lab_result":
        structured = _observation_structured(resource)
        title = title or "Observation"
    elif kind == "diagnostic_report":
        body = resource.get("conclusion") or ""
        if resource.get("status"):
            structured["status"] = str(resource["status"])
        title = title or "Diagnostic report"
    elif kind == "procedure":
        body = _code_text(resource, "code") or ""
        if resource.get("status"):
            structured["status"] = str(resource["status"])
        title = title or body or "Procedure"
    elif kind == "order":
        body = _code_text(resource, "code") or ""
        if resource.get("status"):
            structured["status"] = str(resource["status"])
        title = title or body or "Order"
    if not body and not structured:
        structured = {"resource": kind}
    return ResourceEntry(
        entry_id=entry_id,
        kind=kind,
        occurred_at=occurred_at,
        body=body,
        structured=structured,
        title=title,
        author_role=_author_role(resource),
        source="internal",
    )


def parse_bundle(raw: bytes | str) -> BundleParseResult:
    """Parse a JSON bundle into a sorted timeline, counting skipped resources.

    Entries with no parseable timestamp or a duplicate id are rejected with a
    warning instead of guessed at; unrecognized resource types only bump the
    skip counter. MissingPatientId fires when clinical resources exist but no
    subject reference (or Patient resource) identifies whose record this is.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"bundle is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"bundle is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("resourceType") != "Bundle":
        raise MalformedDocument("document is not a Bundle")

    patient_id: str | None = None
    resources: list[dict] = []
    skipped = 0
    for item in doc.get("entry") or []:
        resource = (item or {}).get("resource")
        if not isinstance(resource, dict):
            skipped += 1
            continue
        rtype = resource.get("resourceType")
        if rtype == "Patient":
            rid = resource.get("id")
            if isinstance(rid, str) and rid and patient_id is None:
                patient_id = rid
            continue
        if rtype not in RESOURCE_KIND_MAP:
            skipped += 1
            continue
        resources.append(resource)

    if patient_id is None:
        for resource in resources:
            patient_id = _subject_id(resource)
            if patient_id:
                break
    if patient_id is None:
        if resources:
            raise MissingPatientId("no Patient resource or subject reference in bundle")
        patient_id = ""

    entries: list[ResourceEntry] = []
    seen_ids: set[str] = set()
    warnings: list[str] = []
    for i, resource in enumerate(resources):
        kind = RESOURCE_KIND_MAP[resource["resourceType"]]
        entry_id = resource.get("id") or f"{kind}-{i}"
        if entry_id in seen_ids:
            warnings.append(f"duplicate entry id {entry_id!r} rejected")
            continue
        occurred_at = _resource_timestamp(resource)
        if occurred_at is None:
            warnings.append(f"entry {entry_id!r} has no parseable timestamp, rejected")
            continue
        entries.append(_entry_from_resource(resource, kind, entry_id, occurred_at))
        seen_ids.add(entry_id)

    entries.sort(key=lambda e: (e.occurred_at, e.entry_id))
    for message in warnings:
        logger.warning("bundle %s: %s", patient_id, message)
    return BundleParseResult(
        timeline=PatientTimeline(patient_id=patient_id, entries=tuple(entries)),
        skipped=skipped,
        warnings=tuple(warnings),
    )


def ingest_native(
    doc: bytes,
    kind: str,
    occurred_at: datetime,
    entry_id: str,
    title: str | None = None,
) -> ResourceEntry:
    """Wrap a non-bundle document (plain text only) as a timeline entry verbatim."""
    if kind not in NATIVE_KINDS:
        raise ValueError(f"native ingest accepts {NATIVE_KINDS}, got {kind!r}")
    if not doc:
        raise UndecodableDocument("empty document")
    try:
        body = doc.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UndecodableDocument(f"document is not UTF-8 text: {exc}") from exc
    if occurred_at.tzinfo is None:
        occurred_at = occurred_at.replace(tzinfo=timezone.utc)
    return ResourceEntry(
        entry_id=entry_id,
        kind=kind,
        occurred_at=occurred_at.astimezone(timezone.utc),
        body=body,
        title=title,
        source="external" if kind == "external_hie" else "internal",
    )


def with_entries(timeline: PatientTimeline, extra: list[ResourceEntry]) -> PatientTimeline:
    """Timeline plus extra entries (e.g. native documents), re-sorted."""
    merged = sorted(list(timeline.entries) + extra, key=lambda e: (e.occurred_at, e.entry_id))
    return PatientTimeline(patient_id=timeline.patient_id, entries=tuple(merged))


def filter_timeline(timeline: PatientTimeline, sel: ContextSelection) -> PatientTimeline:
    """Entries matching the selection's kinds and inclusive time range, order kept."""
    if sel.patient_id != timeline.patient_id:
        raise PatientMismatch(
            f"selection is for {sel.patient_id!r}, timeline is {timeline.patient_id!r}"
        )
    kept = tuple(
        e for e in timeline.entries
        if e.kind in sel.kinds and sel.start <= e.occurred_at <= sel.end
    )
    return PatientTimeline(patient_id=timeline.patient_id, entries=kept)


def _format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def serialize_for_context(timeline: PatientTimeline) -> str:
    """Render the timeline as deterministic model-ready text (grammar above)."""
    blocks: list[str] = []
    for e in timeline.entries:
        header = "[{} | {} | {} | {} | {}]".format(
            e.kind.upper(),
            _format_timestamp(e.occurred_at),
            e.title or "-",
            e.author_role or "-",
            e.source,
        )
        lines = [header]
        for key in sorted(e.structured):
            lines.append(f"{key}: {e.structured[key]}")
        if e.body:
            lines.append(e.body)
        blocks.append("\n".join(lines))
    if not blocks:
        return ""
    return "\n\n".join(blocks) + "\n"


def timeline_to_dict(timeline: PatientTimeline) -> dict:
    """JSON-ready form used by the on-disk store and the synthetic generator."""
    return {
        "patient_id": timeline.patient_id,
        "entries": [
            {
                "entry_id": e.entry_id,
                "kind": e.kind,
                "occurred_at": _format_timestamp(e.occurred_at),
                "body": e.body,
                "structured": e.structured,
                "title": e.title,
                "author_role": e.author_role,
                "source": e.source,
            }
            for e in timeline.entries
        ],
    }


def timeline_from_dict(doc: dict) -> PatientTimeline:
    entries = tuple(
        ResourceEntry(
            entry_id=item["entry_id"],
            kind=item["kind"],
            occurred_at=_parse_timestamp(item["occurred_at"]),
            body=item.get("body", ""),
            structured=dict(item.get("structured") or {}),
            title=item.get("title"),
            author_role=item.get("author_role"),
            source=item.get("source", "internal"),
        )
        for item in doc["entries"]
    )
    return PatientTimeline(patient_id=doc["patient_id"], entries=entries)
