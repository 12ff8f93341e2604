"""Platform configuration: models, backends, tokenizer, budgets, directories.

One JSON file wires the whole platform; every referenced path is resolved
relative to the config file so a config directory is relocatable. With no
config file, the built-in defaults run everything against mocks.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from . import prompts
from .backends import (
    CompositeMockBackend,
    EmbeddingBackend,
    HttpTextBackend,
    ScriptedTextBackend,
    TextBackend,
    TrigramHashEmbedder,
)
from .context import DEFAULT_OUTPUT_RESERVE, TokenizerSpec
from .gateway import ModelProfile

CONFIG_ENV_VAR = "CHARTBRIDGE_CONFIG"

DEFAULT_MODELS = (
    ModelProfile(
        name="compact-8k",
        window_tokens=8_000,
        input_price_per_1k=Decimal("0.0005"),
        output_price_per_1k=Decimal("0.0015"),
    ),
    ModelProfile(
        name="standard-128k",
        window_tokens=128_000,
        input_price_per_1k=Decimal("0.002"),
        output_price_per_1k=Decimal("0.008"),
    ),
    ModelProfile(
        name="longcontext-1m",
        window_tokens=1_000_000,
        input_price_per_1k=Decimal("0.004"),
        output_price_per_1k=Decimal("0.016"),
        tags=frozenset({"reasoning"}),
    ),
)


@dataclass
class PlatformConfig:
    models: list[ModelProfile] = field(default_factory=lambda: list(DEFAULT_MODELS))
    backend_spec: dict = field(default_factory=lambda: {"type": "mock"})
    embedder_spec: dict = field(default_factory=lambda: {"type": "trigram", "dimension": 256})
    tokenizer: TokenizerSpec = TokenizerSpec()
    output_reserve: int = DEFAULT_OUTPUT_RESERVE
    chunk_size: int = 500
    chunk_overlap: int = 50
    max_parallel: int = 4
    seed: int = 0
    log_dir: Path = Path("logs")
    patients_dir: Path = Path("patients")
    reports_dir: Path = Path("reports")

    def build_backend(self) -> TextBackend:
        kind = self.backend_spec.get("type", "mock")
        if kind == "mock":
            chat = None
            script = self.backend_spec.get("script")
            if script:
                chat = ScriptedTextBackend.from_script_file(str(script))
            return CompositeMockBackend(chat=chat, catalog=prompts.task_catalog())
        if kind == "scripted":
            return ScriptedTextBackend.from_script_file(str(self.backend_spec["script"]))
        if kind == "http":
            return HttpTextBackend(
                endpoint=self.backend_spec["endpoint"],
                auth_env=self.backend_spec.get("auth_env"),
            )
        raise ValueError(f"unknown backend type {kind!r}")

    def build_embedder(self) -> EmbeddingBackend:
        kind = self.embedder_spec.get("type", "trigram")
        if kind == "trigram":
            return TrigramHashEmbedder(dimension=int(self.embedder_spec.get("dimension", 256)))
        raise ValueError(f"unknown embedder type {kind!r}")


def _model_from_dict(doc: dict) -> ModelProfile:
    return ModelProfile(
        name=doc["name"],
        window_tokens=int(doc["window_tokens"]),
        input_price_per_1k=Decimal(str(doc.get("input_price_per_1k", "0"))),
        output_price_per_1k=Decimal(str(doc.get("output_price_per_1k", "0"))),
        throughput_tokens_per_min=doc.get("throughput_tokens_per_min"),
        tags=frozenset(doc.get("tags", ())),
    )


def load_config(path: str | Path | None = None) -> PlatformConfig:
    """Config from an explicit path, the environment variable, or defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return PlatformConfig()
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent

    def _dir(key: str, default: str) -> Path:
        value = doc.get(key, default)
        p = Path(value)
        return p if p.is_absolute() else base / p

    backend_spec = dict(doc.get("backend", {"type": "mock"}))
    if "script" in backend_spec:
        script = Path(backend_spec["script"])
        script = script if script.is_absolute() else base / script
        if not script.is_file():
            raise FileNotFoundError(f"backend script not found: {script}")
        backend_spec["script"] = str(script)

    tok = doc.get("tokenizer", {})
    config = PlatformConfig(
        models=[_model_from_dict(m) for m in doc.get("models", [])] or list(DEFAULT_MODELS),
        backend_spec=backend_spec,
        embedder_spec=dict(doc.get("embedder", {"type": "trigram", "dimension": 256})),
        tokenizer=TokenizerSpec(
            name=tok.get("name", "chars-div-4"),
            count_rule=tok.get("count_rule", "chars_div_4"),
            divisor=int(tok.get("divisor", 4)),
        ),
        output_reserve=int(doc.get("output_reserve", DEFAULT_OUTPUT_RESERVE)),
        chunk_size=int(doc.get("chunk", {}).get("size", 500)),
        chunk_overlap=int(doc.get("chunk", {}).get("overlap", 50)),
        max_parallel=int(doc.get("max_parallel", 4)),
        seed=int(doc.get("seed", 0)),
        log_dir=_dir("log_dir", "logs"),
        patients_dir=_dir("patients_dir", "patients"),
        reports_dir=_dir("reports_dir", "reports"),
    )
    return config
