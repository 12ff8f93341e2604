from __future__ import annotations

import json
import math
import random
import string

import pytest

from chartbridge.backends import (
    ClaimPipelineMockBackend,
    ContainmentEntailmentBackend,
    TrigramHashEmbedder,
)
from chartbridge.claims import (
    AdjudicationFailed,
    ClassificationFailed,
    EvalReport,
    GenerationInput,
    adjudicate,
    build_index,
    classify,
    report_to_json,
    retrieve_support,
    score_corpus,
    score_generation,
)

EMBEDDER = TrigramHashEmbedder()

SOURCE_SENTENCES = [
    "The patient was admitted with community acquired pneumonia.",
    "Ceftriaxone was started on the first hospital day.",
    "Oxygen requirements decreased steadily after admission.",
    "A chest radiograph showed a right lower lobe infiltrate.",
    "The sodium level was 138 on the day of discharge.",
    "Follow-up with the primary care clinic was arranged.",
]

FABRICATED = [
    "An undocumented bronchoscopy was performed before discharge.",
    "A dermatology consultation reviewed a new rash.",
    "The patient received three units of packed red cells.",
    "A lumbar puncture was obtained in the emergency department.",
    "Home intravenous antibiotics were arranged with infusion services.",
]

CONTRADICTED = [
    "A sodium of 99 contradicts the documented discharge value.",
    "The stated left-sided infiltrate contradicts the radiograph report.",
]


def make_source(rng: random.Random | None = None) -> str:
    return " ".join(SOURCE_SENTENCES)


def make_summary(copied: int, fabricated: int, contradicted: int) -> str:
    parts = SOURCE_SENTENCES[:copied] + FABRICATED[:fabricated] + CONTRADICTED[:contradicted]
    summary = " ".join(parts)
    assert len(summary) <= 500, "planted summaries must stay single-chunk"
    return summary


class TestBuildIndex:
    def test_1200_char_record_three_chunks(self):
        rng = random.Random(1)
        text = "".join(rng.choice(string.ascii_lowercase + " .") for _ in range(1200))
        index = build_index(text, EMBEDDER)
        assert len(index) == math.ceil((1200 - 500) / 450) + 1 == 3
        assert index.vectors.shape == (3, 256)
        assert index.offsets == [0, 450, 900]

    def test_empty_record(self):
        index = build_index("", EMBEDDER)
        assert len(index) == 0
        assert index.vectors.shape == (0, 256)

    def test_deterministic(self):
        text = make_source()
        a, b = build_index(text, EMBEDDER), build_index(text, EMBEDDER)
        assert a.chunks == b.chunks
        assert (a.vectors == b.vectors).all()


class TestRetrieveSupport:
    def test_identical_chunk_ranks_first_with_similarity_one(self):
        rng = random.Random(2)
        text = "".join(rng.choice("abcdefgh ") for _ in range(1400))
        index = build_index(text, EMBEDDER)
        target = index.chunks[2]
        results = retrieve_support(target, index, EMBEDDER)
        assert results[0].index == 2
        assert results[0].similarity == pytest.approx(1.0, abs=1e-12)

    def test_up_to_k(self):
        text = "x" * (450 * 9 + 500)  # exactly 10 chunks
        index = build_index(text, EMBEDDER)
        assert len(index) == 10
        assert len(retrieve_support("x" * 100, index, EMBEDDER, k=200)) == 10

    def test_matches_brute_force_on_random_chunks(self):
        rng = random.Random(7)
        words = ["pneumonia", "sodium", "radiograph", "discharge", "antibiotic",
                 "admission", "oxygen", "clinic", "fever", "infiltrate"]
        chunks = [" ".join(rng.choice(words) for _ in range(12)) for _ in range(50)]
        text_parts = []
        # build a text whose 500/50 chunking is irrelevant; instead index the
        # pieces directly through a hand-built index
        from chartbridge.claims import ChunkIndex
        import numpy as np

        vectors = np.stack([EMBEDDER.embed(c) for c in chunks])
        index = ChunkIndex(offsets=list(range(0, 50 * 10, 10)), chunks=chunks, vectors=vectors)
        for _ in range(10):
            query = " ".join(rng.choice(words) for _ in range(12))
            got = [(s.index, s.offset) for s in retrieve_support(query, index, EMBEDDER, k=50)]
            qv = EMBEDDER.embed(query)
            sims = []
            for i, c in enumerate(chunks):
                cv = vectors[i]
                num = math.fsum(float(a) * float(b) for a, b in zip(qv, cv))
                den = math.sqrt(math.fsum(float(a) ** 2 for a in qv)) * math.sqrt(
                    math.fsum(float(b) ** 2 for b in cv)
                )
                sims.append(num / den)
            want = sorted(range(50), key=lambda i: (-round(sims[i], 12), index.offsets[i]))
            assert [g[0] for g in got] == want


class TestAdjudicate:
    def test_contained_sentence_entailed(self):
        backend = ContainmentEntailmentBackend()
        verdict = adjudicate(SOURCE_SENTENCES[0], [make_source()], backend)
        assert verdict.all_relevant_facts_entailed is True

    def test_fabricated_sentence_not_entailed_with_explanation(self):
        backend = ContainmentEntailmentBackend()
        verdict = adjudicate(FABRICATED[0], [make_source()], backend)
        assert verdict.all_relevant_facts_entailed is False
        assert FABRICATED[0] in verdict.explanation

    def test_prose_response_retries_once_then_fails(self):
        calls = []

        class ProseBackend:
            def complete(self, system_prompt, user_content):
                calls.append(user_content)
                return "I think everything is fully supported."

        with pytest.raises(AdjudicationFailed):
            adjudicate("text", ["source"], ProseBackend())
        assert len(calls) == 2

    def test_malformed_then_valid_recovers(self):
        responses = iter(["not json", json.dumps(
            {"all_relevant_facts_entailed": True, "explanation": "ok"})])

        class FlakyBackend:
            def complete(self, system_prompt, user_content):
                return next(responses)

        verdict = adjudicate("text", ["source"], FlakyBackend())
        assert verdict.all_relevant_facts_entailed is True


class TestClassify:
    def test_empty_input_short_circuits_without_backend(self):
        class ExplodingBackend:
            def complete(self, system_prompt, user_content):
                raise AssertionError("classify must not call the backend on empty input")

        verdict = classify("output", [], ExplodingBackend())
        assert verdict.risk_level == 1
        assert verdict.inaccuracies == () and verdict.hallucinations == ()

    def test_passthrough_counts(self):
        class ScriptedClassifier:
            def complete(self, system_prompt, user_content):
                return json.dumps(
                    {
                        "risk_level": 3,
                        "explanation": "two fabrications and one contradiction",
                        "inaccuracies": ["wrong lab value"],
                        "hallucinations": ["made-up consult", "made-up transfusion"],
                    }
                )

        verdict = classify("output", ["finding"], ScriptedClassifier())
        assert (len(verdict.hallucinations), len(verdict.inaccuracies)) == (2, 1)
        assert verdict.risk_level == 3

    def test_out_of_range_risk_level_rejected(self):
        class BadClassifier:
            def complete(self, system_prompt, user_content):
                return json.dumps(
                    {"risk_level": 7, "explanation": "", "inaccuracies": [], "hallucinations": []}
                )

        with pytest.raises(ClassificationFailed):
            classify("output", ["finding"], BadClassifier())

    def test_extra_key_rejected(self):
        class ChattyClassifier:
            def complete(self, system_prompt, user_content):
                return json.dumps(
                    {"risk_level": 2, "explanation": "", "inaccuracies": [],
                     "hallucinations": [], "notes": "extra"}
                )

        with pytest.raises(ClassificationFailed):
            classify("output", ["finding"], ChattyClassifier())


class TestScoreGeneration:
    def test_planted_counts(self):
        backend = ClaimPipelineMockBackend()
        gen = GenerationInput("g1", make_summary(2, 2, 1), make_source(), 4)
        score = score_generation(gen, EMBEDDER, backend)
        assert len(score.verdict.hallucinations) == 2
        assert len(score.verdict.inaccuracies) == 1

    def test_verbatim_copy_scores_zero(self):
        backend = ClaimPipelineMockBackend()
        source = make_source()
        gen = GenerationInput("g1", source[:400], source, 4)
        score = score_generation(gen, EMBEDDER, backend)
        assert score.verdict.unsupported == 0
        assert score.verdict.risk_level == 1


class TestScoreCorpus:
    def _corpus_with_counts(self, counts):
        gens = []
        for i, count in enumerate(counts):
            fabricated = min(count, len(FABRICATED))
            contradicted = count - fabricated
            gens.append(
                GenerationInput(
                    f"gen{i:03d}",
                    make_summary(1, fabricated, contradicted),
                    make_source(),
                    4,
                )
            )
        return gens

    def test_mean_and_fraction_arithmetic(self):
        report = score_corpus(
            self._corpus_with_counts([0, 1, 2, 5]), EMBEDDER, ClaimPipelineMockBackend()
        )
        assert report.generations_analyzed == 4
        assert report.mean_unsupported == 2.0
        assert report.fraction_le_one == 0.5

    def test_planted_corpus_oracle(self):
        gens = [
            GenerationInput(f"gen{i:03d}", make_summary(2, 2, 1), make_source(), 4)
            for i in range(10)
        ]
        report = score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend())
        assert report.mean_hallucinations == 2.0
        assert report.mean_inaccuracies == 1.0
        assert report.mean_unsupported == 3.0
        assert report.histogram == {3: 1.0}

    def test_only_summarization_scored(self):
        gens = self._corpus_with_counts([1, 1])
        gens[0].linguistic_task = 1  # question answering, skipped
        report = score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend())
        assert report.generations_analyzed == 1

    def test_histogram_fractions_sum_to_one(self):
        report = score_corpus(
            self._corpus_with_counts([0, 0, 1, 2, 3, 3, 4]), EMBEDDER, ClaimPipelineMockBackend()
        )
        assert abs(sum(report.histogram.values()) - 1.0) < 1e-9
        assert report.fraction_le_one == pytest.approx(
            report.histogram.get(0, 0.0) + report.histogram.get(1, 0.0)
        )

    def test_mean_identity(self):
        report = score_corpus(
            self._corpus_with_counts([0, 2, 4, 1, 3]), EMBEDDER, ClaimPipelineMockBackend()
        )
        assert report.mean_unsupported == pytest.approx(
            report.mean_hallucinations + report.mean_inaccuracies, abs=1e-12
        )

    def test_seeded_sampling_deterministic(self):
        gens = self._corpus_with_counts([0, 1, 2, 3, 4, 0, 1, 2, 3, 4])
        a = score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend(), sample_fraction=0.5, seed=9)
        b = score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend(), sample_fraction=0.5, seed=9)
        assert report_to_json(a) == report_to_json(b)
        assert a.generations_analyzed == 5

    def test_report_byte_deterministic(self):
        gens = self._corpus_with_counts([0, 1, 2])
        a = report_to_json(score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend()))
        b = report_to_json(score_corpus(gens, EMBEDDER, ClaimPipelineMockBackend()))
        assert a == b

    def test_report_shape_format_check(self):
        # rendering format check on constructed sums: 73 + 160 findings over
        # 100 generations give the 0.73/1.60/2.33 mean layout with half of
        # the generations at one-or-zero findings
        report = EvalReport(
            generations_analyzed=100,
            mean_unsupported=233 / 100,
            mean_hallucinations=73 / 100,
            mean_inaccuracies=160 / 100,
            fraction_le_one=0.5,
            histogram={0: 0.26, 1: 0.24, 2: 0.1, 3: 0.1, 4: 0.3},
        )
        rendered = json.loads(report_to_json(report))
        assert rendered["mean_unsupported"] == 2.33
        assert rendered["mean_hallucinations"] == 0.73
        assert rendered["mean_inaccuracies"] == 1.6
        assert rendered["fraction_le_one"] == 0.5
        assert abs(sum(report.histogram.values()) - 1.0) < 1e-9
        assert report.fraction_le_one == report.histogram[0] + report.histogram[1]

    def test_failed_adjudications_excluded_and_counted(self):
        gens = self._corpus_with_counts([1, 1, 1])
        poison = gens[1].generation_id

        class SelectiveBackend:
            def __init__(self):
                self.inner = ClaimPipelineMockBackend()

            def complete(self, system_prompt, user_content):
                if "<ai_content>" in user_content and FABRICATED[0] in user_content:
                    return "never valid json"
                return self.inner.complete(system_prompt, user_content)

        # make generation 1 the only one with FABRICATED[0]; others use a contradiction
        gens = [
            GenerationInput("gen000", make_summary(2, 0, 1), make_source(), 4),
            GenerationInput("gen001", make_summary(2, 1, 0), make_source(), 4),
            GenerationInput("gen002", make_summary(2, 0, 2), make_source(), 4),
        ]
        report = score_corpus(gens, EMBEDDER, SelectiveBackend())
        assert report.generations_analyzed == 2
        assert report.generations_skipped == 1
        assert report.failed_adjudications == 1
        assert report.mean_inaccuracies == 1.5  # (1 + 2) / 2
