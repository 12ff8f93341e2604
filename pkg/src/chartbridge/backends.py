"""Pluggable text and embedding backends.

The platform is model-agnostic: anything with complete(system_prompt,
user_content) -> text can serve generations, and anything with embed(text)
-> vector can serve retrieval. Ships one generic HTTP backend plus a family
of bit-deterministic mocks so every pipeline runs offline.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from typing import Protocol

import numpy as np
import requests


class BackendUnavailable(RuntimeError):
    """Backend could not produce a usable response."""


class TextBackend(Protocol):
    def complete(self, system_prompt: str, user_content: str) -> str: ...


class EmbeddingBackend(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def content_digest(text: str) -> str:
    """Stable key for scripting mock responses to a specific request body."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ScriptedTextBackend:
    """Deterministic mock: maps content digests to responses.

    Script shape (also the on-disk fixture format):
        {"responses": {"<sha256-of-content>": "text", ...},
         "default": "OK",
         "fail_marker": "optional substring that triggers a failure"}
    """

    def __init__(
        self,
        responses: dict[str, str] | None = None,
        default: str = "OK",
        fail_marker: str | None = None,
    ):
        self.responses = dict(responses or {})
        self.default = default
        self.fail_marker = fail_marker
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_script_file(cls, path: str) -> "ScriptedTextBackend":
        with open(path, encoding="utf-8") as fh:
            script = json.load(fh)
        return cls(
            responses=script.get("responses"),
            default=script.get("default", "OK"),
            fail_marker=script.get("fail_marker"),
        )

    def script(self, content: str, response: str) -> None:
        self.responses[content_digest(content)] = response

    def complete(self, system_prompt: str, user_content: str) -> str:
        with self._lock:
            self.calls.append((system_prompt, user_content))
        if self.fail_marker and self.fail_marker in user_content:
            raise BackendUnavailable(f"scripted failure on marker {self.fail_marker!r}")
        return self.responses.get(content_digest(user_content), self.default)


class HttpTextBackend:
    """Generic HTTP completion endpoint.

    POST {system, content} -> {text, tokens_in, tokens_out}; bearer token read
    from the named environment variable. Token counts in the response are
    informational; telemetry recounts with the platform tokenizer so accounting
    stays uniform across backends.
    """

    def __init__(self, endpoint: str, auth_env: str | None = None, timeout_s: float = 120.0):
        self.endpoint = endpoint
        self.auth_env = auth_env
        self.timeout_s = timeout_s

    def complete(self, system_prompt: str, user_content: str) -> str:
        headers = {}
        if self.auth_env:
            token = os.environ.get(self.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        try:
            resp = requests.post(
                self.endpoint,
                json={"system": system_prompt, "content": user_content},
                headers=headers,
                timeout=self.timeout_s,
            )
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as exc:
            raise BackendUnavailable(f"http backend failed: {exc}") from exc
        text = body.get("text")
        if not isinstance(text, str):
            raise BackendUnavailable("http backend returned no 'text' field")
        return text


class TrigramHashEmbedder:
    """Default embedding mock: character trigrams hashed into 256 dims, L2-normalized.

    Deterministic across processes (hashing via sha256, not the seeded builtin),
    so retrieval tests get stable, meaningful cosine similarities with no model.
    """

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        grams = (
            [text[i : i + 3] for i in range(len(text) - 2)]
            if len(text) >= 3
            else ([text] if text else [])
        )
        for gram in grams:
            digest = hashlib.sha256(gram.encode("utf-8")).digest()
            vec[int.from_bytes(digest[:4], "big") % self.dimension] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm


# ---------------------------------------------------------------------------
# Prompt-aware mocks. These parse the filled evaluation prompts back apart so
# the whole claim/task pipeline runs end to end with no model in the loop.
# ---------------------------------------------------------------------------

def _between(text: str, open_tag: str, close_tag: str) -> str | None:
    start = text.find(open_tag)
    if start < 0:
        return None
    start += len(open_tag)
    end = text.find(close_tag, start)
    if end < 0:
        return None
    return text[start:end]


def split_sentences(text: str) -> list[str]:
    """Crude sentence split shared by the containment mocks; deterministic."""
    parts = re.split(r"(?<=[.!?])\s+|\n+", text)
    return [p.strip() for p in parts if p.strip()]


class ContainmentEntailmentBackend:
    """Entailment mock: a sentence is entailed iff it appears verbatim in some
    support chunk. Answers the two-key contract of the entailment prompt."""

    def respond_entailment(self, ai_content: str, source_chunks: str) -> str:
        supports = [s for s in source_chunks.split("\n\n") if s]
        missing = [
            sentence
            for sentence in split_sentences(ai_content)
            if not any(sentence in chunk for chunk in supports)
        ]
        if missing:
            return json.dumps(
                {
                    "all_relevant_facts_entailed": False,
                    "explanation": "Not supported by the source: " + " | ".join(missing),
                },
                ensure_ascii=False,
            )
        return json.dumps(
            {
                "all_relevant_facts_entailed": True,
                "explanation": "All stated facts appear verbatim in the source chunks.",
            },
            ensure_ascii=False,
        )

    def complete(self, system_prompt: str, user_content: str) -> str:
        ai_content = _between(user_content, "<ai_content>\n", "\n</ai_content>")
        source_chunks = _between(user_content, "<source_chunks>\n", "\n</source_chunks>")
        if ai_content is None or source_chunks is None:
            raise BackendUnavailable("entailment mock got a non-entailment prompt")
        return self.respond_entailment(ai_content, source_chunks)


class MarkerClaimClassifierBackend:
    """Classification mock: buckets each non-entailed statement by marker text.

    Statements containing an inaccuracy marker become inaccuracies; everything
    else counts as a hallucination (absent from the record entirely). Risk level
    is 1 with no findings, otherwise a fixed configurable level.
    """

    def __init__(self, inaccuracy_markers: tuple[str, ...] = ("contradict",), risk_level: int = 3):
        self.inaccuracy_markers = inaccuracy_markers
        self.risk_level = risk_level

    def complete(self, system_prompt: str, user_content: str) -> str:
        facts = _between(user_content, "<non_entailed_facts>\n", "\n</non_entailed_facts>")
        if facts is None:
            raise BackendUnavailable("classifier mock got a non-classification prompt")
        statements: list[str] = []
        for line in facts.splitlines():
            line = line.strip().lstrip("- ")
            if not line:
                continue
            payload = line.split("Not supported by the source: ", 1)[-1]
            statements.extend(s.strip() for s in payload.split(" | ") if s.strip())
        inaccuracies = [s for s in statements if any(m in s for m in self.inaccuracy_markers)]
        hallucinations = [s for s in statements if s not in inaccuracies]
        if not statements:
            verdict = {
                "risk_level": 1,
                "explanation": "No unsupported content identified.",
                "inaccuracies": [],
                "hallucinations": [],
            }
        else:
            verdict = {
                "risk_level": self.risk_level,
                "explanation": f"{len(statements)} unsupported statements could mislead care.",
                "inaccuracies": inaccuracies,
                "hallucinations": hallucinations,
            }
        return json.dumps(verdict, ensure_ascii=False)


class ClaimPipelineMockBackend:
    """Routes entailment prompts to the containment rule and classification
    prompts to the marker classifier; lets one backend drive the full pipeline."""

    def __init__(self, inaccuracy_markers: tuple[str, ...] = ("contradict",), risk_level: int = 3):
        self._entailment = ContainmentEntailmentBackend()
        self._classifier = MarkerClaimClassifierBackend(inaccuracy_markers, risk_level)

    def complete(self, system_prompt: str, user_content: str) -> str:
        if "<non_entailed_facts>" in user_content:
            return self._classifier.complete(system_prompt, user_content)
        if "<ai_content>" in user_content:
            return self._entailment.complete(system_prompt, user_content)
        raise BackendUnavailable("claim mock got an unrecognized prompt")


def extract_normalization_query(prompt: str) -> str | None:
    return _between(prompt, "Current Task\n\nUser Query:\n\n", "\n\nYour Response:")


def extract_linguistic_question(prompt: str) -> str | None:
    return _between(prompt, "Now it's your turn\n\nUser Question:\n\n```\n", "\n```")


class CatalogNormalizerBackend:
    """Task-normalization mock: passes catalog phrasings through byte-exact,
    honors a scripted query map, and otherwise falls back to a trimmed
    imperative phrase of at most ten words."""

    def __init__(self, catalog: tuple[str, ...] = (), scripted: dict[str, str] | None = None):
        self.catalog = {entry.lower(): entry for entry in catalog}
        self.scripted = dict(scripted or {})

    def complete(self, system_prompt: str, user_content: str) -> str:
        query = extract_normalization_query(user_content)
        if query is None:
            raise BackendUnavailable("normalizer mock got a non-normalization prompt")
        if query in self.scripted:
            return self.scripted[query]
        hit = self.catalog.get(query.strip().rstrip(".").lower())
        if hit:
            return hit
        words = re.sub(r"[^\w\s'-]", "", query).split()
        return " ".join(words[:10]) if words else query.strip()


class RuleBasedLinguisticBackend:
    """Linguistic-task mock keyed on the five task definitions: translation
    requests are 5, explicit summary requests 4, extraction verbs 3,
    categorize/rate 2, direct questions 1, anything else 0."""

    def complete(self, system_prompt: str, user_content: str) -> str:
        question = extract_linguistic_question(user_content)
        if question is None:
            raise BackendUnavailable("linguistic mock got a non-classification prompt")
        q = question.lower()
        number = 0
        if "translate" in q or "in spanish" in q or "make it english" in q:
            number = 5
        elif "summar" in q or "overview" in q or "in short" in q or "brief" in q:
            number = 4
        elif re.search(r"\b(extract|list|find|show|get)\b", q):
            number = 3
        elif re.search(r"\b(categorize|classify|rate|label|score)\b", q):
            number = 2
        elif "?" in q or re.match(r"^(what|when|why|how|which|who|does|is|are|can|did)\b", q):
            number = 1
        return json.dumps({"number": number})


class CompositeMockBackend:
    """One offline backend for the whole platform: dispatches the evaluation
    prompt shapes to their rule mocks and everything else (chat, automations)
    to a scripted backend."""

    def __init__(
        self,
        chat: ScriptedTextBackend | None = None,
        catalog: tuple[str, ...] = (),
        inaccuracy_markers: tuple[str, ...] = ("contradict",),
    ):
        self.chat = chat or ScriptedTextBackend(default="Reviewed the provided record.")
        self.claims = ClaimPipelineMockBackend(inaccuracy_markers=inaccuracy_markers)
        self.normalizer = CatalogNormalizerBackend(catalog=catalog)
        self.linguistic = RuleBasedLinguisticBackend()

    def complete(self, system_prompt: str, user_content: str) -> str:
        if "<non_entailed_facts>" in user_content or "<ai_content>" in user_content:
            return self.claims.complete(system_prompt, user_content)
        if "Current Task\n\nUser Query:" in user_content:
            return self.normalizer.complete(system_prompt, user_content)
        if "Now it's your turn\n\nUser Question:" in user_content:
            return self.linguistic.complete(system_prompt, user_content)
        return self.chat.complete(system_prompt, user_content)


def load_script_backend(path: str) -> ScriptedTextBackend:
    return ScriptedTextBackend.from_script_file(path)
