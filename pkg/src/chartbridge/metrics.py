"""Usage and integrity metrics over session logs.

Everything is an exact fold over the ingested records: unique users,
sessions, queries, token totals, daily/weekly activity, one-week vs
multi-week retention, latency and token histograms, and the breakdown of
which data-source combinations sessions load. Calendar weeks are ISO weeks
in UTC.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .sessionlog import SessionRecord, read_log_dir
from .timeline import ENTRY_KINDS


class InvalidBinWidth(ValueError):
    """Histogram bin width must be positive."""


@dataclass
class UsageSnapshot:
    unique_users: int
    sessions: int
    queries: int
    total_tokens: int
    daily_active: dict[str, int]
    weekly: dict[str, dict[str, int]]
    retention: dict[str, int]  # used_1w / used_ge_2w


@dataclass
class HistogramSpec:
    metric: str  # latency_s | tokens
    bin_width: float
    bins: dict[float, int] = field(default_factory=dict)


def _iso_week(ts: datetime) -> str:
    year, week, _ = ts.astimezone(timezone.utc).isocalendar()
    return f"{year}-W{week:02d}"


def _iso_day(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%d")


class MetricsStore:
    """Append-only holder of session records; snapshots copy before counting."""

    def __init__(self) -> None:
        self._records: list[SessionRecord] = []

    def ingest(self, records: list[SessionRecord]) -> None:
        self._records.extend(records)

    def ingest_dir(self, directory: str | Path) -> None:
        self.ingest(read_log_dir(directory))

    @property
    def records(self) -> list[SessionRecord]:
        return list(self._records)

    def snapshot(self) -> UsageSnapshot:
        records = list(self._records)
        users = {r.user_id for r in records}
        daily: dict[str, set[str]] = {}
        weekly: dict[str, dict[str, set]] = {}
        user_weeks: dict[str, set[str]] = {}
        queries = 0
        total_tokens = 0
        for r in records:
            day = _iso_day(r.created_at)
            week = _iso_week(r.created_at)
            daily.setdefault(day, set()).add(r.user_id)
            bucket = weekly.setdefault(week, {"users": set(), "sessions": set(), "patients": set()})
            bucket["users"].add(r.user_id)
            bucket["sessions"].add(r.session_id)
            bucket["patients"].add(r.patient_id)
            user_weeks.setdefault(r.user_id, set()).add(week)
            queries += len(r.turns)
            total_tokens += sum(t.tokens_sent + t.tokens_received for t in r.turns)
        used_1w = sum(1 for weeks in user_weeks.values() if len(weeks) == 1)
        return UsageSnapshot(
            unique_users=len(users),
            sessions=len(records),
            queries=queries,
            total_tokens=total_tokens,
            daily_active={day: len(u) for day, u in sorted(daily.items())},
            weekly={
                week: {
                    "users": len(b["users"]),
                    "sessions": len(b["sessions"]),
                    "unique_patients": len(b["patients"]),
                }
                for week, b in sorted(weekly.items())
            },
            retention={"used_1w": used_1w, "used_ge_2w": len(users) - used_1w},
        )


def histogram(values: list[float], metric: str, bin_width: float) -> HistogramSpec:
    """Exact floor-division binning; a value on a boundary lands in the upper
    bin (floor(20/10)*10 == bin 20). Empty bins are omitted."""
    if bin_width <= 0:
        raise InvalidBinWidth(f"bin_width must be positive, got {bin_width}")
    bins: dict[float, int] = {}
    for v in values:
        lower = math.floor(v / bin_width) * bin_width
        bins[lower] = bins.get(lower, 0) + 1
    return HistogramSpec(metric=metric, bin_width=bin_width, bins=dict(sorted(bins.items())))


def latency_seconds(records: list[SessionRecord]) -> list[float]:
    return [
        (t.latency_assembly_ms + t.latency_inference_ms) / 1000.0
        for r in records
        for t in r.turns
    ]


def tokens_per_query(records: list[SessionRecord]) -> list[float]:
    return [float(t.tokens_sent) for r in records for t in r.turns]


ALL_KINDS_KEY = "all"


def kinds_key(kinds: tuple[str, ...] | frozenset[str]) -> str:
    if set(kinds) == set(ENTRY_KINDS):
        return ALL_KINDS_KEY
    return ",".join(sorted(kinds))


def data_type_breakdown(records: list[SessionRecord]) -> dict[str, float]:
    """Session fraction per data-source combination; fractions sum to 1."""
    if not records:
        return {}
    counts: dict[str, int] = {}
    for r in records:
        key = kinds_key(r.kinds)
        counts[key] = counts.get(key, 0) + 1
    return {key: count / len(records) for key, count in sorted(counts.items())}


def external_hie_fraction(records: list[SessionRecord]) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if "external_hie" in r.kinds) / len(records)


def department_breakdown(records: list[SessionRecord]) -> dict[str, int]:
    """Sessions per free-text department, when sessions carry one."""
    counts: dict[str, int] = {}
    for r in records:
        if r.department:
            counts[r.department] = counts.get(r.department, 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def load_job_files(directory: str | Path) -> list[dict]:
    """Automation job files (written by `automation run`), sorted by job id."""
    import json

    jobs = [
        json.loads(path.read_text(encoding="utf-8"))
        for path in sorted(Path(directory).glob("*.json"))
    ]
    return sorted(jobs, key=lambda j: j.get("job_id", ""))


def job_latency_seconds(jobs: list[dict]) -> list[float]:
    return [p["telemetry"]["latency_ms"] / 1000.0 for j in jobs for p in j.get("patients", [])]


def job_tokens_per_patient(jobs: list[dict]) -> list[float]:
    return [float(p["telemetry"]["tokens_sent"]) for j in jobs for p in j.get("patients", [])]
