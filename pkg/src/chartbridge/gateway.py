"""Model registry, token-count routing, and plan execution with telemetry.

Routing is deterministic: the cheapest model whose window fits the request
wins; oversized requests fall back to the largest window and a map-reduce
plan. Execution fans chunk requests out over a bounded thread pool but
reassembles strictly in chunk-index order, so completion order never leaks
into the response.
"""
from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal

from .backends import TextBackend
from .context import (
    DEFAULT_OUTPUT_RESERVE,
    DEFAULT_TOKENIZER,
    Chunk,
    ContextPackage,
    FanoutPlan,
    TokenizerSpec,
    chars_for_tokens,
    chunk_text,
    count_tokens,
    plan_fanout,
)

MAX_REDUCE_DEPTH = 10


class EmptyRegistry(ValueError):
    """Routing needs at least one model profile."""


class ProfileMismatch(ValueError):
    """Telemetry priced against the wrong model profile."""


class BackendError(RuntimeError):
    """Generation failed; telemetry for every attempt rides along."""

    def __init__(self, message: str, telemetry: list["RequestTelemetry"] | None = None):
        super().__init__(message)
        self.telemetry = telemetry or []


@dataclass(frozen=True)
class ModelProfile:
    name: str
    window_tokens: int
    input_price_per_1k: Decimal = Decimal("0")
    output_price_per_1k: Decimal = Decimal("0")
    throughput_tokens_per_min: int | None = None
    tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.window_tokens <= 0:
            raise ValueError(f"model {self.name}: window_tokens must be positive")
        object.__setattr__(self, "input_price_per_1k", Decimal(str(self.input_price_per_1k)))
        object.__setattr__(self, "output_price_per_1k", Decimal(str(self.output_price_per_1k)))
        if self.input_price_per_1k < 0 or self.output_price_per_1k < 0:
            raise ValueError(f"model {self.name}: prices must be >= 0")


@dataclass
class RequestTelemetry:
    request_id: str
    model: str
    latency_ms: int
    tokens_sent: int
    tokens_received: int
    error_code: str | None = None
    cost: Decimal = Decimal("0")


def cost(telemetry: RequestTelemetry, profile: ModelProfile) -> Decimal:
    """Per-request price: tokens/1000 times the per-1k rates, 6dp half-up."""
    if telemetry.model != profile.name:
        raise ProfileMismatch(f"telemetry is for {telemetry.model!r}, profile is {profile.name!r}")
    raw = (
        Decimal(telemetry.tokens_sent) / 1000 * profile.input_price_per_1k
        + Decimal(telemetry.tokens_received) / 1000 * profile.output_price_per_1k
    )
    return raw.quantize(Decimal("0.000001"), rounding=ROUND_HALF_UP)


def route(
    pkg: ContextPackage,
    registry: list[ModelProfile],
    output_reserve: int = DEFAULT_OUTPUT_RESERVE,
    tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
) -> tuple[ModelProfile, FanoutPlan]:
    """Pick the smallest window that fits total+reserve (price, then name, on
    ties); when nothing fits, the largest window takes the request chunked."""
    if not registry:
        raise EmptyRegistry("no models registered")
    tie_key = lambda m: (m.input_price_per_1k, m.name)
    fitting = [m for m in registry if pkg.total_tokens + output_reserve <= m.window_tokens]
    if fitting:
        chosen = min(fitting, key=lambda m: (m.window_tokens, *tie_key(m)))
    else:
        biggest = max(m.window_tokens for m in registry)
        chosen = min((m for m in registry if m.window_tokens == biggest), key=tie_key)
    plan = plan_fanout(pkg, chosen.window_tokens, output_reserve, tokenizer, model_name=chosen.name)
    return chosen, plan


def render_user_content(query: str, record_text: str) -> str:
    """Record first, then the query: the record block is fixed per session, so
    successive turn inputs extend each other as the transcript grows."""
    if not record_text:
        return query
    return f"[Patient record]\n{record_text}\n\n{query}"


@dataclass
class ExecutionResult:
    response: str
    telemetry: list[RequestTelemetry]


class _Requester:
    """Issues one priced, retried request at a time; thread-safe."""

    def __init__(
        self,
        backend: TextBackend,
        model_name: str,
        tokenizer: TokenizerSpec,
        profile: ModelProfile | None,
    ):
        self.backend = backend
        self.model_name = model_name
        self.tokenizer = tokenizer
        self.profile = profile

    def _record(
        self, request_id: str, sent: int, received: int, latency_ms: int, error: str | None
    ) -> RequestTelemetry:
        rec = RequestTelemetry(
            request_id=request_id,
            model=self.model_name,
            latency_ms=latency_ms,
            tokens_sent=sent,
            tokens_received=received,
            error_code=error,
        )
        if self.profile is not None and error is None:
            rec.cost = cost(rec, self.profile)
        return rec

    def request(
        self, request_id: str, system_prompt: str, user_content: str
    ) -> tuple[str | None, list[RequestTelemetry]]:
        """One attempt plus one retry; telemetry for every attempt."""
        sent = count_tokens(system_prompt, self.tokenizer) + count_tokens(user_content, self.tokenizer)
        telemetry: list[RequestTelemetry] = []
        for attempt, rid in enumerate((request_id, request_id + "r")):
            started = time.perf_counter()
            try:
                text = self.backend.complete(system_prompt, user_content)
            except Exception as exc:
                latency = int(round((time.perf_counter() - started) * 1000))
                telemetry.append(self._record(rid, sent, 0, latency, f"backend_error: {exc}"))
                continue
            latency = int(round((time.perf_counter() - started) * 1000))
            received = count_tokens(text, self.tokenizer)
            telemetry.append(self._record(rid, sent, received, latency, None))
            return text, telemetry
        return None, telemetry


def _chunk_user_content(query: str, index: int, total: int, chunk_text_: str) -> str:
    if total == 1:
        return render_user_content(query, chunk_text_)
    return f"[Patient record, chunk {index + 1} of {total}]\n{chunk_text_}\n\n{query}"


def execute(
    plan: FanoutPlan,
    backend: TextBackend,
    tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
    profile: ModelProfile | None = None,
    max_parallel: int = 4,
    request_prefix: str = "req",
) -> ExecutionResult:
    """Run a plan: one request for single mode; per-chunk requests plus a
    synthesis request for map_reduce (recursing when the synthesis input is
    itself over capacity). Chunk answers enter the synthesis input in chunk
    index order no matter which finishes first. A chunk that fails its retry
    fails the whole generation; all attempt telemetry is preserved either way.
    """
    requester = _Requester(backend, plan.model_name, tokenizer, profile)

    if plan.mode == "single":
        chunk = plan.chunks[0]
        content = render_user_content(plan.query, chunk.text)
        text, telemetry = requester.request(f"{request_prefix}-0", plan.system_prompt, content)
        if text is None:
            raise BackendError("request failed after retry", telemetry)
        return ExecutionResult(response=text, telemetry=telemetry)

    telemetry: list[RequestTelemetry] = []
    answers = _map_phase(plan, list(plan.chunks), requester, max_parallel, f"{request_prefix}-L0", telemetry)
    return _reduce_phase(plan, answers, requester, tokenizer, max_parallel, request_prefix, telemetry, level=1)


def _map_phase(
    plan: FanoutPlan,
    chunks: list[Chunk],
    requester: _Requester,
    max_parallel: int,
    prefix: str,
    telemetry: list[RequestTelemetry],
) -> list[str]:
    """Answers for every chunk, gathered back into index order."""
    results: dict[int, tuple[str | None, list[RequestTelemetry]]] = {}

    def work(chunk: Chunk) -> None:
        content = _chunk_user_content(plan.query, chunk.index, len(chunks), chunk.text)
        results[chunk.index] = requester.request(f"{prefix}-c{chunk.index}", plan.system_prompt, content)

    if max_parallel > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=max_parallel) as pool:
            list(pool.map(work, chunks))
    else:
        for chunk in chunks:
            work(chunk)

    answers: list[str] = []
    failed: int | None = None
    for index in range(len(chunks)):
        text, records = results[index]
        telemetry.extend(records)
        if text is None and failed is None:
            failed = index
        answers.append(text or "")
    if failed is not None:
        raise BackendError(f"chunk {failed} failed after retry", telemetry)
    return answers


def _reduce_phase(
    plan: FanoutPlan,
    answers: list[str],
    requester: _Requester,
    tokenizer: TokenizerSpec,
    max_parallel: int,
    request_prefix: str,
    telemetry: list[RequestTelemetry],
    level: int,
) -> ExecutionResult:
    assembled = "\n\n".join(f"[Answer for chunk {i}]\n{a}" for i, a in enumerate(answers))
    # Content budget per request is capacity + query; the synthesis input that
    # exceeds it goes through another map round over the assembled answers.
    while (
        count_tokens(assembled, tokenizer) > plan.capacity
        and level < MAX_REDUCE_DEPTH
    ):
        size = chars_for_tokens(plan.capacity, tokenizer)
        pieces = chunk_text(assembled, size, int(size * 0.10))
        chunks = [Chunk(i, piece, count_tokens(piece, tokenizer)) for i, piece in enumerate(pieces)]
        sub_plan = replace(plan, chunks=tuple(chunks), query=plan.reduce_instruction)
        answers = _map_phase(sub_plan, chunks, requester, max_parallel, f"{request_prefix}-L{level}", telemetry)
        assembled = "\n\n".join(f"[Answer for chunk {i}]\n{a}" for i, a in enumerate(answers))
        level += 1

    content = f"{plan.reduce_instruction}\n\nOriginal query: {plan.query}\n\n{assembled}"
    text, records = requester.request(f"{request_prefix}-reduce", plan.system_prompt, content)
    telemetry.extend(records)
    if text is None:
        raise BackendError("reduce request failed after retry", telemetry)
    return ExecutionResult(response=text, telemetry=telemetry)


class ModelGateway:
    """Routing plus execution behind one object; what the automation engine
    and the chat service talk to."""

    def __init__(
        self,
        registry: list[ModelProfile],
        backend: TextBackend,
        tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
        output_reserve: int = DEFAULT_OUTPUT_RESERVE,
        max_parallel: int = 4,
    ):
        if not registry:
            raise EmptyRegistry("no models registered")
        self.registry = list(registry)
        self.backend = backend
        self.tokenizer = tokenizer
        self.output_reserve = output_reserve
        self.max_parallel = max_parallel
        self._counter = 0
        self._lock = threading.Lock()

    def _next_prefix(self) -> str:
        with self._lock:
            self._counter += 1
            return f"req{self._counter:06d}"

    def profile(self, name: str) -> ModelProfile:
        for model in self.registry:
            if model.name == name:
                return model
        raise ProfileMismatch(f"no model named {name!r} in registry")

    def generate(
        self,
        pkg: ContextPackage,
        request_prefix: str | None = None,
        prefer: str | None = None,
    ) -> tuple[str, list[RequestTelemetry], ModelProfile]:
        if prefer:
            profile = self.profile(prefer)
            plan = plan_fanout(
                pkg, profile.window_tokens, self.output_reserve, self.tokenizer,
                model_name=profile.name,
            )
        else:
            profile, plan = route(pkg, self.registry, self.output_reserve, self.tokenizer)
        result = execute(
            plan,
            self.backend,
            tokenizer=self.tokenizer,
            profile=profile,
            max_parallel=self.max_parallel,
            request_prefix=request_prefix or self._next_prefix(),
        )
        return result.response, result.telemetry, profile
