"""Token accounting, context packaging, and single-vs-chunked execution planning.

Everything here is pure and deterministic: the same inputs always produce the
same package or plan, so plans can be logged, replayed, and diffed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

DEFAULT_CHUNK_SIZE = 500
DEFAULT_CHUNK_OVERLAP = 50
DEFAULT_OUTPUT_RESERVE = 8192

# Fraction of the chunk size shared between consecutive fan-out chunks.
FANOUT_OVERLAP_RATIO = 0.10

DEFAULT_REDUCE_INSTRUCTION = (
    "You are given answers produced independently from consecutive, overlapping "
    "chunks of a single patient record. Synthesize them into one response to the "
    "original query, removing duplication and resolving the chronology."
)


class InvalidParams(ValueError):
    """Chunker called with a non-sensical size/overlap combination."""


class EmptyQuery(ValueError):
    """A context package requires a non-empty query."""


class WindowTooSmall(ValueError):
    """Model window cannot hold even the prompts plus the output reserve."""


_EXTERNAL_COUNTERS: dict[str, Callable[[str], int]] = {}


def register_token_counter(name: str, fn: Callable[[str], int]) -> None:
    """Register a counter for TokenizerSpec(count_rule='external', name=name)."""
    _EXTERNAL_COUNTERS[name] = fn


@dataclass(frozen=True)
class TokenizerSpec:
    name: str = "chars-div-4"
    count_rule: str = "chars_div_4"  # chars_div_4 | whitespace_words | external
    divisor: int = 4

    def __post_init__(self) -> None:
        if self.count_rule == "chars_div_4" and self.divisor <= 0:
            raise InvalidParams(f"divisor must be positive, got {self.divisor}")


DEFAULT_TOKENIZER = TokenizerSpec()


def count_tokens(text: str, spec: TokenizerSpec = DEFAULT_TOKENIZER) -> int:
    if spec.count_rule == "chars_div_4":
        return math.ceil(len(text) / spec.divisor)
    if spec.count_rule == "whitespace_words":
        return len(text.split())
    if spec.count_rule == "external":
        try:
            counter = _EXTERNAL_COUNTERS[spec.name]
        except KeyError:
            raise InvalidParams(f"no external token counter registered as {spec.name!r}") from None
        return counter(text)
    raise InvalidParams(f"unknown count_rule {spec.count_rule!r}")


def chars_for_tokens(tokens: int, spec: TokenizerSpec = DEFAULT_TOKENIZER) -> int:
    """Inverse of count_tokens: the largest character budget counting to <= tokens.

    Only the offline rules are invertible; external tokenizers fall back to the
    chars_div_4 default, which keeps planning conservative rather than exact.
    """
    if spec.count_rule == "chars_div_4":
        return tokens * spec.divisor
    return tokens * DEFAULT_TOKENIZER.divisor


def chunk_text(text: str, size: int, overlap: int) -> list[str]:
    """Split text into fixed-stride chunks of `size` chars sharing `overlap` chars.

    Chunk i starts at offset i*(size-overlap); every character lands in at
    least one chunk and consecutive chunks share exactly `overlap` characters
    (the final chunk may be shorter than `size`). Empty text yields no chunks.
    """
    if size <= 0 or overlap < 0 or overlap >= size:
        raise InvalidParams(f"need 0 <= overlap < size, got size={size} overlap={overlap}")
    if not text:
        return []
    if len(text) <= size:
        return [text]
    stride = size - overlap
    n = math.ceil((len(text) - size) / stride) + 1
    return [text[i * stride : i * stride + size] for i in range(n)]


def chunk_offsets(text_length: int, size: int, overlap: int) -> list[int]:
    """Start offsets chunk_text would use for a text of the given length."""
    if size <= 0 or overlap < 0 or overlap >= size:
        raise InvalidParams(f"need 0 <= overlap < size, got size={size} overlap={overlap}")
    if text_length == 0:
        return []
    if text_length <= size:
        return [0]
    stride = size - overlap
    n = math.ceil((text_length - size) / stride) + 1
    return [i * stride for i in range(n)]


@dataclass(frozen=True)
class ContextPackage:
    system_prompt: str
    query: str
    record_text: str
    token_counts: dict[str, int]

    @property
    def total_tokens(self) -> int:
        return self.token_counts["total"]


def build_context(
    record_text: str,
    query: str,
    system_prompt: str,
    tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
) -> ContextPackage:
    if not query:
        raise EmptyQuery("query must be non-empty")
    counts = {
        "system": count_tokens(system_prompt, tokenizer),
        "query": count_tokens(query, tokenizer),
        "record": count_tokens(record_text, tokenizer),
    }
    counts["total"] = counts["system"] + counts["query"] + counts["record"]
    return ContextPackage(
        system_prompt=system_prompt,
        query=query,
        record_text=record_text,
        token_counts=counts,
    )


@dataclass(frozen=True)
class Chunk:
    index: int
    text: str
    token_count: int


@dataclass(frozen=True)
class FanoutPlan:
    mode: str  # single | map_reduce
    chunks: tuple[Chunk, ...]
    model_name: str
    system_prompt: str = ""
    query: str = ""
    reduce_instruction: str = ""
    capacity: int = 0  # record-token budget per request, for recursive reduce

    def __post_init__(self) -> None:
        if self.mode == "single" and len(self.chunks) != 1:
            raise InvalidParams("single plan must carry exactly one chunk")
        if [c.index for c in self.chunks] != list(range(len(self.chunks))):
            raise InvalidParams("chunk indices must be contiguous from 0")


def plan_fanout(
    pkg: ContextPackage,
    window_tokens: int,
    output_reserve: int = DEFAULT_OUTPUT_RESERVE,
    tokenizer: TokenizerSpec = DEFAULT_TOKENIZER,
    model_name: str = "",
    reduce_instruction: str = DEFAULT_REDUCE_INSTRUCTION,
) -> FanoutPlan:
    """Plan one call if the record fits, otherwise overlapping parallel chunks.

    Capacity is what the window leaves for record text after the prompts and
    the output reserve. Oversized records are split with chunk_text at the
    character budget equivalent to the capacity, overlapping by 10% so no
    chunk boundary severs an entry silently.
    """
    fixed = output_reserve + pkg.token_counts["system"] + pkg.token_counts["query"]
    if window_tokens <= fixed:
        raise WindowTooSmall(
            f"window of {window_tokens} tokens cannot fit prompts plus reserve ({fixed})"
        )
    capacity = window_tokens - fixed
    record_tokens = pkg.token_counts["record"]
    if record_tokens <= capacity:
        chunks = (Chunk(0, pkg.record_text, record_tokens),)
        mode = "single"
    else:
        size = chars_for_tokens(capacity, tokenizer)
        overlap = int(size * FANOUT_OVERLAP_RATIO)
        pieces = chunk_text(pkg.record_text, size, overlap)
        chunks = tuple(
            Chunk(i, piece, count_tokens(piece, tokenizer)) for i, piece in enumerate(pieces)
        )
        mode = "map_reduce"
    return FanoutPlan(
        mode=mode,
        chunks=chunks,
        model_name=model_name,
        system_prompt=pkg.system_prompt,
        query=pkg.query,
        reduce_instruction=reduce_instruction if mode == "map_reduce" else "",
        capacity=capacity,
    )
