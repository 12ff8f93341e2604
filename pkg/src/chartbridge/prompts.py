"""Shipped prompt fixtures, loaded byte-exact.

Templates are filled with plain string replacement of the named placeholder
only; every other byte, including literal braces, passes through untouched.
"""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

SYSTEM_PROMPT_FILE = "system_prompt.txt"
ENTAILMENT_PROMPT_FILE = "entailment_prompt.txt"
CLAIM_CLASSIFICATION_PROMPT_FILE = "claim_classification_prompt.txt"
TASK_NORMALIZATION_PROMPT_FILE = "task_normalization_prompt.txt"
LINGUISTIC_CLASSIFICATION_PROMPT_FILE = "linguistic_classification_prompt.txt"
TASK_CATALOG_FILE = "task_catalog.txt"


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return (
        resources.files("chartbridge")
        .joinpath("prompts", name)
        .read_bytes()
        .decode("utf-8")
    )


def fill(template: str, **placeholders: str) -> str:
    for key, value in placeholders.items():
        token = "{" + key + "}"
        if token not in template:
            raise KeyError(f"placeholder {token} not present in template")
        template = template.replace(token, value)
    return template


def system_prompt() -> str:
    return load_prompt(SYSTEM_PROMPT_FILE)


def entailment_prompt(ai_content: str, source_chunks: str) -> str:
    return fill(
        load_prompt(ENTAILMENT_PROMPT_FILE),
        ai_content=ai_content,
        source_chunks=source_chunks,
    )


def claim_classification_prompt(full_ai_output: str, expl_no_entail: str) -> str:
    return fill(
        load_prompt(CLAIM_CLASSIFICATION_PROMPT_FILE),
        full_ai_output=full_ai_output,
        expl_no_entail=expl_no_entail,
    )


def task_normalization_prompt(user_query: str) -> str:
    return fill(load_prompt(TASK_NORMALIZATION_PROMPT_FILE), USER_QUERY=user_query)


def linguistic_classification_prompt(user_question: str) -> str:
    return fill(load_prompt(LINGUISTIC_CLASSIFICATION_PROMPT_FILE), user_question=user_question)


@lru_cache(maxsize=None)
def task_catalog() -> tuple[str, ...]:
    lines = load_prompt(TASK_CATALOG_FILE).splitlines()
    return tuple(line for line in lines if line)
