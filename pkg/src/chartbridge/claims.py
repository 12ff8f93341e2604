"""Unsupported-claims pipeline: chunk, retrieve, adjudicate, classify, report.

A generation is scored by chunking it alongside its source record (500-char
chunks, 50 overlap), retrieving the most similar source chunks per summary
chunk by cosine similarity, asking the adjudicator backend whether every
fact is entailed, and classifying the non-entailed findings into
hallucinations (absent from the record) and inaccuracies (contradicting it)
on a 1-5 harm scale. Corpus statistics are exact folds over the per-
generation counts.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import prompts
from .backends import EmbeddingBackend, TextBackend
from .context import DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE, chunk_offsets, chunk_text

RETRIEVAL_K = 200


class AdjudicationFailed(RuntimeError):
    """Adjudicator broke the two-key contract twice for one chunk."""


class ClassificationFailed(RuntimeError):
    """Classifier broke the four-key contract or the 1-5 risk range."""


@dataclass
class ChunkIndex:
    offsets: list[int]
    chunks: list[str]
    vectors: np.ndarray  # one row per chunk

    def __len__(self) -> int:
        return len(self.chunks)


@dataclass(frozen=True)
class EntailmentVerdict:
    summary_chunk_index: int
    all_relevant_facts_entailed: bool
    explanation: str


@dataclass(frozen=True)
class ClaimVerdict:
    risk_level: int
    explanation: str
    inaccuracies: tuple[str, ...]
    hallucinations: tuple[str, ...]

    @property
    def unsupported(self) -> int:
        return len(self.inaccuracies) + len(self.hallucinations)


@dataclass
class GenerationInput:
    generation_id: str
    summary_text: str
    source_text: str
    linguistic_task: int


@dataclass
class GenerationScore:
    generation_id: str
    verdict: ClaimVerdict
    chunk_verdicts: list[EntailmentVerdict]


@dataclass
class EvalReport:
    generations_analyzed: int
    mean_unsupported: float
    mean_hallucinations: float
    mean_inaccuracies: float
    fraction_le_one: float
    histogram: dict[int, float]
    risk_levels: dict[int, int] = field(default_factory=dict)
    failed_adjudications: int = 0
    generations_skipped: int = 0  # failed adjudication, excluded from the stats
    unsupported_counts: list[int] = field(default_factory=list)


def build_index(source_text: str, embedder: EmbeddingBackend) -> ChunkIndex:
    chunks = chunk_text(source_text, DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP) if source_text else []
    offsets = chunk_offsets(len(source_text), DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP)
    if chunks:
        vectors = np.stack([embedder.embed(c) for c in chunks])
    else:
        vectors = np.zeros((0, embedder.dimension))
    return ChunkIndex(offsets=offsets, chunks=chunks, vectors=vectors)


@dataclass(frozen=True)
class ScoredChunk:
    index: int
    offset: int
    text: str
    similarity: float


def retrieve_support(
    summary_chunk: str,
    index: ChunkIndex,
    embedder: EmbeddingBackend,
    k: int = RETRIEVAL_K,
) -> list[ScoredChunk]:
    """Up to k source chunks by descending cosine similarity, offset-ascending
    on ties. Ranking quantizes similarities to 12 decimals so that ties are
    well-defined independent of floating-point summation order."""
    if len(index) == 0:
        return []
    query = embedder.embed(summary_chunk)
    qnorm = float(np.linalg.norm(query))
    norms = np.linalg.norm(index.vectors, axis=1)
    denom = np.where(norms * qnorm == 0, 1.0, norms * qnorm)
    sims = index.vectors @ query / denom
    order = sorted(range(len(index)), key=lambda i: (-round(sims[i], 12), index.offsets[i]))
    return [
        ScoredChunk(index=i, offset=index.offsets[i], text=index.chunks[i], similarity=float(sims[i]))
        for i in order[: min(k, len(index))]
    ]


def _strict_json_object(text: str, keys: set[str]) -> dict | None:
    try:
        doc = json.loads(text.strip())
    except json.JSONDecodeError:
        return None
    if not isinstance(doc, dict) or set(doc) != keys:
        return None
    return doc


def adjudicate(
    summary_chunk: str,
    support_chunks: list[str],
    backend: TextBackend,
    summary_chunk_index: int = 0,
) -> EntailmentVerdict:
    """One entailment call per summary chunk; one parse retry, then failure."""
    prompt = prompts.entailment_prompt(
        ai_content=summary_chunk, source_chunks="\n\n".join(support_chunks)
    )
    last = ""
    for _ in range(2):
        last = backend.complete("", prompt)
        doc = _strict_json_object(last, {"all_relevant_facts_entailed", "explanation"})
        if doc is not None and isinstance(doc["all_relevant_facts_entailed"], bool):
            return EntailmentVerdict(
                summary_chunk_index=summary_chunk_index,
                all_relevant_facts_entailed=doc["all_relevant_facts_entailed"],
                explanation=str(doc["explanation"]),
            )
    raise AdjudicationFailed(f"adjudicator did not honor the contract: {last[:200]!r}")


NO_FINDINGS = ClaimVerdict(risk_level=1, explanation="", inaccuracies=(), hallucinations=())


def classify(
    full_ai_output: str,
    non_entailed_explanations: list[str],
    backend: TextBackend,
) -> ClaimVerdict:
    """Categorize the gathered non-entailed facts; empty input short-circuits
    to no-harm without a backend call."""
    if not non_entailed_explanations:
        return NO_FINDINGS
    prompt = prompts.claim_classification_prompt(
        full_ai_output=full_ai_output,
        expl_no_entail="\n".join(f"- {e}" for e in non_entailed_explanations),
    )
    response = backend.complete("", prompt)
    doc = _strict_json_object(
        response, {"risk_level", "explanation", "inaccuracies", "hallucinations"}
    )
    if (
        doc is None
        or not isinstance(doc["risk_level"], int)
        or doc["risk_level"] not in (1, 2, 3, 4, 5)
        or not isinstance(doc["inaccuracies"], list)
        or not isinstance(doc["hallucinations"], list)
    ):
        raise ClassificationFailed(f"classifier did not honor the contract: {response[:200]!r}")
    return ClaimVerdict(
        risk_level=doc["risk_level"],
        explanation=str(doc["explanation"]),
        inaccuracies=tuple(str(s) for s in doc["inaccuracies"]),
        hallucinations=tuple(str(s) for s in doc["hallucinations"]),
    )


def score_generation(
    gen: GenerationInput,
    embedder: EmbeddingBackend,
    backend: TextBackend,
    retrieval_k: int = RETRIEVAL_K,
) -> GenerationScore:
    index = build_index(gen.source_text, embedder)
    verdicts: list[EntailmentVerdict] = []
    for i, chunk in enumerate(
        chunk_text(gen.summary_text, DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_OVERLAP)
    ):
        support = [s.text for s in retrieve_support(chunk, index, embedder, retrieval_k)]
        verdicts.append(adjudicate(chunk, support, backend, summary_chunk_index=i))
    explanations = [v.explanation for v in verdicts if not v.all_relevant_facts_entailed]
    verdict = classify(gen.summary_text, explanations, backend)
    return GenerationScore(generation_id=gen.generation_id, verdict=verdict, chunk_verdicts=verdicts)


SUMMARIZATION_TASK = 4


def score_corpus(
    generations: list[GenerationInput],
    embedder: EmbeddingBackend,
    backend: TextBackend,
    sample_fraction: float = 1.0,
    seed: int = 0,
    retrieval_k: int = RETRIEVAL_K,
) -> EvalReport:
    """Deterministic seeded sample of the corpus; only summarization
    generations are scored. Generations whose adjudication fails are excluded
    from the statistics and reported in a separate count.
    """
    ordered = sorted(generations, key=lambda g: g.generation_id)
    if sample_fraction < 1.0:
        take = int(round(len(ordered) * sample_fraction))
        rng = random.Random(seed)
        ordered = [ordered[i] for i in sorted(rng.sample(range(len(ordered)), take))]
    summaries = [g for g in ordered if g.linguistic_task == SUMMARIZATION_TASK]

    counts: list[int] = []
    hall_total = 0
    inacc_total = 0
    risk_levels: dict[int, int] = {}
    failed_calls = 0
    skipped = 0
    for gen in summaries:
        try:
            score = score_generation(gen, embedder, backend, retrieval_k)
        except AdjudicationFailed:
            failed_calls += 1
            skipped += 1
            continue
        counts.append(score.verdict.unsupported)
        hall_total += len(score.verdict.hallucinations)
        inacc_total += len(score.verdict.inaccuracies)
        risk_levels[score.verdict.risk_level] = risk_levels.get(score.verdict.risk_level, 0) + 1

    n = len(counts)
    histogram = {
        value: counts.count(value) / n for value in sorted(set(counts))
    } if n else {}
    fraction_le_one = float(
        Fraction(sum(1 for c in counts if c <= 1), n)
    ) if n else 0.0
    return EvalReport(
        generations_analyzed=n,
        mean_unsupported=(hall_total + inacc_total) / n if n else 0.0,
        mean_hallucinations=hall_total / n if n else 0.0,
        mean_inaccuracies=inacc_total / n if n else 0.0,
        fraction_le_one=fraction_le_one,
        histogram=histogram,
        risk_levels=dict(sorted(risk_levels.items())),
        failed_adjudications=failed_calls,
        generations_skipped=skipped,
        unsupported_counts=counts,
    )


def report_to_json(report: EvalReport) -> str:
    doc = {
        "generations_analyzed": report.generations_analyzed,
        "mean_unsupported": round(report.mean_unsupported, 6),
        "mean_hallucinations": round(report.mean_hallucinations, 6),
        "mean_inaccuracies": round(report.mean_inaccuracies, 6),
        "fraction_le_one": round(report.fraction_le_one, 6),
        "histogram": {str(k): round(v, 6) for k, v in report.histogram.items()},
        "risk_levels": {str(k): v for k, v in report.risk_levels.items()},
        "failed_adjudications": report.failed_adjudications,
        "generations_skipped": report.generations_skipped,
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
