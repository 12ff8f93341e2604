"""Line-delimited session-log records shared by the chat service and every
evaluator. One JSON object per session: who, which patient, the data
selection, the serialized context, and the turn-by-turn generations with
feedback and telemetry. Serialization is byte-deterministic (sorted keys,
fixed separators) so identical stores export identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class MalformedLog(ValueError):
    """A session-log line failed to parse or is missing required fields."""


@dataclass
class Feedback:
    thumbs: str  # up | down
    note: str | None = None

    def __post_init__(self) -> None:
        if self.thumbs not in ("up", "down"):
            raise ValueError(f"thumbs must be up or down, got {self.thumbs!r}")


@dataclass
class Generation:
    turn_index: int
    query: str
    response: str
    model: str
    latency_assembly_ms: int = 0
    latency_inference_ms: int = 0
    tokens_sent: int = 0
    tokens_received: int = 0
    status: str = "ok"  # ok | error
    feedback: Feedback | None = None


@dataclass
class SessionRecord:
    session_id: str
    patient_id: str
    user_id: str
    created_at: datetime
    kinds: tuple[str, ...]
    range_start: datetime
    range_end: datetime
    context_text: str = ""
    department: str | None = None
    turns: list[Generation] = field(default_factory=list)


def _iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_ts(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def record_to_json(record: SessionRecord) -> str:
    doc = {
        "session_id": record.session_id,
        "patient_id": record.patient_id,
        "user_id": record.user_id,
        "department": record.department,
        "created_at": _iso(record.created_at),
        "selection": {
            "kinds": sorted(record.kinds),
            "start": _iso(record.range_start),
            "end": _iso(record.range_end),
        },
        "context_text": record.context_text,
        "turns": [
            {
                "turn_index": t.turn_index,
                "query": t.query,
                "response": t.response,
                "model": t.model,
                "latency_assembly_ms": t.latency_assembly_ms,
                "latency_inference_ms": t.latency_inference_ms,
                "tokens": {"sent": t.tokens_sent, "received": t.tokens_received},
                "status": t.status,
                "feedback": (
                    {"thumbs": t.feedback.thumbs, "note": t.feedback.note}
                    if t.feedback
                    else None
                ),
            }
            for t in record.turns
        ],
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def record_from_json(line: str) -> SessionRecord:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLog(f"invalid JSON: {exc}") from exc
    try:
        selection = doc["selection"]
        turns = [
            Generation(
                turn_index=t["turn_index"],
                query=t["query"],
                response=t["response"],
                model=t.get("model", ""),
                latency_assembly_ms=t.get("latency_assembly_ms", 0),
                latency_inference_ms=t.get("latency_inference_ms", 0),
                tokens_sent=(t.get("tokens") or {}).get("sent", 0),
                tokens_received=(t.get("tokens") or {}).get("received", 0),
                status=t.get("status", "ok"),
                feedback=(
                    Feedback(thumbs=t["feedback"]["thumbs"], note=t["feedback"].get("note"))
                    if t.get("feedback")
                    else None
                ),
            )
            for t in doc.get("turns", [])
        ]
        return SessionRecord(
            session_id=doc["session_id"],
            patient_id=doc["patient_id"],
            user_id=doc.get("user_id", ""),
            department=doc.get("department"),
            created_at=_parse_ts(doc["created_at"]),
            kinds=tuple(selection["kinds"]),
            range_start=_parse_ts(selection["start"]),
            range_end=_parse_ts(selection["end"]),
            context_text=doc.get("context_text", ""),
            turns=turns,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedLog(f"session record missing fields: {exc}") from exc


def write_log_file(records: list[SessionRecord], path: str | Path) -> None:
    ordered = sorted(records, key=lambda r: (r.created_at, r.session_id))
    text = "".join(record_to_json(r) + "\n" for r in ordered)
    Path(path).write_text(text, encoding="utf-8")


def read_log_file(path: str | Path) -> list[SessionRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(record_from_json(line))
        except MalformedLog as exc:
            raise MalformedLog(f"{path}:{lineno}: {exc}") from exc
    return records


def read_log_dir(directory: str | Path) -> list[SessionRecord]:
    """All session records under a directory of *.jsonl files, sorted."""
    records: list[SessionRecord] = []
    for path in sorted(Path(directory).glob("*.jsonl")):
        records.extend(read_log_file(path))
    records.sort(key=lambda r: (r.created_at, r.session_id))
    return records
