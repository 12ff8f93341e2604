"""Interactive chat sessions over a patient record.

A session pins one patient, one data selection, and the serialized context
text for its whole lifetime (changing the selection means a new session).
Every turn sends the default system prompt, the session context, and the
full prior transcript through the gateway; turns, feedback, and telemetry
land in the session log. Also hosts the system-prompt variant trial used to
pick the shipped prompt.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import prompts
from .context import DEFAULT_TOKENIZER, TokenizerSpec, build_context
from .gateway import BackendError, ModelGateway
from .sessionlog import Feedback, Generation, SessionRecord, write_log_file
from .store import TimelineStore
from .timeline import ContextSelection, filter_timeline, serialize_for_context


class UnknownSession(KeyError):
    """No session with that id."""


class InvalidSelection(ValueError):
    """Selection failed validation (no kinds, bad range, unknown kind)."""


class UnknownTurn(KeyError):
    """Feedback addressed a turn index that does not exist."""


class DuplicateFeedback(ValueError):
    """Feedback is immutable once recorded for a turn."""


class EmptyQuery(ValueError):
    """Messages must be non-empty."""


class IncompleteScores(ValueError):
    """Prompt trials need a score for every (variant, case) pair."""


@dataclass
class Session:
    session_id: str
    patient_id: str
    user_id: str
    selection: ContextSelection
    created_at: datetime
    context_text: str
    assembly_latency_ms: int
    department: str | None = None
    turns: list[Generation] = field(default_factory=list)


def _transcript_payload(turns: list[Generation], query: str) -> str:
    """Prior turns plus the new query; each turn's payload is a prefix
    extension of the previous one."""
    parts: list[str] = []
    for t in turns:
        parts.append(f"User: {t.query}")
        parts.append(f"Assistant: {t.response}")
    parts.append(f"User: {query}")
    return "\n".join(parts)


class ChatService:
    def __init__(
        self,
        store: TimelineStore,
        gateway: ModelGateway,
        tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
        system_prompt: str | None = None,
        log_dir: str | Path | None = None,
    ):
        self.store = store
        self.gateway = gateway
        self.tokenizer = tokenizer
        # Byte-exact shipped default unless the deployment overrides it.
        self.system_prompt = system_prompt if system_prompt is not None else prompts.system_prompt()
        self.log_dir = Path(log_dir) if log_dir else None
        self._sessions: dict[str, Session] = {}
        self._session_locks: dict[str, threading.Lock] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def _flush_logs(self) -> None:
        """Keep the configured log directory current after every mutation; the
        file is byte-deterministic for a given store state."""
        if self.log_dir is None:
            return
        self.log_dir.mkdir(parents=True, exist_ok=True)
        with self._lock:
            write_log_file(self.export_logs(), self.log_dir / "sessions.jsonl")

    def create_session(
        self,
        patient_id: str,
        kinds: list[str],
        start: datetime,
        end: datetime,
        user_id: str = "",
        department: str | None = None,
    ) -> Session:
        timeline = self.store.get(patient_id)  # raises UnknownPatient
        try:
            selection = ContextSelection(
                patient_id=patient_id, kinds=frozenset(kinds), start=start, end=end
            )
        except ValueError as exc:
            raise InvalidSelection(str(exc)) from exc
        assembled_at = time.perf_counter()
        context_text = serialize_for_context(filter_timeline(timeline, selection))
        assembly_ms = int(round((time.perf_counter() - assembled_at) * 1000))
        with self._lock:
            self._counter += 1
            session_id = f"s{self._counter:06d}"
        session = Session(
            session_id=session_id,
            patient_id=patient_id,
            user_id=user_id,
            selection=selection,
            created_at=datetime.now(timezone.utc),
            context_text=context_text,
            assembly_latency_ms=assembly_ms,
            department=department,
        )
        self._sessions[session_id] = session
        self._session_locks[session_id] = threading.Lock()
        self._flush_logs()
        return session

    def session(self, session_id: str) -> Session:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def send_message(self, session_id: str, query: str) -> Generation:
        """Run one turn. The gateway input is the session context plus the full
        prior transcript plus the query; turns within a session are strictly
        serialized. A backend failure still records the turn (status=error)
        before the error propagates.
        """
        if not query:
            raise EmptyQuery("query must be non-empty")
        session = self.session(session_id)
        with self._session_locks[session_id]:
            assembled_at = time.perf_counter()
            payload = _transcript_payload(session.turns, query)
            pkg = build_context(session.context_text, payload, self.system_prompt, self.tokenizer)
            assembly_ms = int(round((time.perf_counter() - assembled_at) * 1000))
            if not session.turns:
                assembly_ms += session.assembly_latency_ms
            turn_index = len(session.turns)
            try:
                response, telemetry, profile = self.gateway.generate(
                    pkg, request_prefix=f"{session_id}-t{turn_index}"
                )
            except BackendError as exc:
                turn = Generation(
                    turn_index=turn_index,
                    query=query,
                    response="",
                    model=exc.telemetry[0].model if exc.telemetry else "",
                    latency_assembly_ms=assembly_ms,
                    latency_inference_ms=sum(t.latency_ms for t in exc.telemetry),
                    tokens_sent=sum(t.tokens_sent for t in exc.telemetry),
                    tokens_received=0,
                    status="error",
                )
                session.turns.append(turn)
                self._flush_logs()
                raise
            turn = Generation(
                turn_index=turn_index,
                query=query,
                response=response,
                model=profile.name,
                latency_assembly_ms=assembly_ms,
                latency_inference_ms=sum(t.latency_ms for t in telemetry),
                tokens_sent=sum(t.tokens_sent for t in telemetry),
                tokens_received=sum(t.tokens_received for t in telemetry),
                status="ok",
            )
            session.turns.append(turn)
        self._flush_logs()
        return turn

    def record_feedback(
        self, session_id: str, turn_index: int, thumbs: str, note: str | None = None
    ) -> None:
        session = self.session(session_id)
        if not 0 <= turn_index < len(session.turns):
            raise UnknownTurn(f"{session_id} has no turn {turn_index}")
        turn = session.turns[turn_index]
        if turn.feedback is not None:
            raise DuplicateFeedback(f"turn {turn_index} already has feedback")
        turn.feedback = Feedback(thumbs=thumbs, note=note)
        self._flush_logs()

    # -- logs -------------------------------------------------------------

    def _to_record(self, session: Session) -> SessionRecord:
        return SessionRecord(
            session_id=session.session_id,
            patient_id=session.patient_id,
            user_id=session.user_id,
            department=session.department,
            created_at=session.created_at,
            kinds=tuple(sorted(session.selection.kinds)),
            range_start=session.selection.start,
            range_end=session.selection.end,
            context_text=session.context_text,
            turns=list(session.turns),
        )

    def export_logs(
        self, start: datetime | None = None, end: datetime | None = None
    ) -> list[SessionRecord]:
        records = [
            self._to_record(s)
            for s in self._sessions.values()
            if (start is None or s.created_at >= start)
            and (end is None or s.created_at <= end)
        ]
        records.sort(key=lambda r: (r.created_at, r.session_id))
        return records

    def export_logs_to(self, path: str) -> int:
        records = self.export_logs()
        write_log_file(records, path)
        return len(records)


# -- prompt variant selection ---------------------------------------------


@dataclass
class PromptVariantTrial:
    variants: list[str]
    cases: list[tuple[str, str]]  # (patient_id, question)
    scores: dict[tuple[int, int], float]  # (variant index, case index) -> score

    def __post_init__(self) -> None:
        for key, score in self.scores.items():
            if score not in (0, 0.5, 1):
                raise ValueError(f"score for {key} must be 0, 0.5 or 1, got {score}")


def run_prompt_trial(trial: PromptVariantTrial) -> dict:
    """Aggregate scores per variant; highest total wins, first variant on ties."""
    missing = [
        (v, c)
        for v in range(len(trial.variants))
        for c in range(len(trial.cases))
        if (v, c) not in trial.scores
    ]
    if missing:
        raise IncompleteScores(f"{len(missing)} unscored (variant, case) pairs, first {missing[0]}")
    totals = [
        sum(trial.scores[(v, c)] for c in range(len(trial.cases)))
        for v in range(len(trial.variants))
    ]
    winner = max(range(len(totals)), key=lambda v: (totals[v], -v))
    return {"winner_index": winner, "winner": trial.variants[winner], "totals": totals}
