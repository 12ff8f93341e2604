"""Categorize user queries by medical intent and linguistic task.

Medical intent: normalize each query to a concise task phrase (catalog hit
or a generated imperative), embed the phrases, K-means them with a fixed
seed, name each cluster after the phrase nearest its centroid, then merge
clusters whose centroids sit within a cosine-distance threshold. Linguistic
task: a strict five-way classification (0 = none apply). Feedback rates are
exact folds per task.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .backends import EmbeddingBackend, TextBackend

DEFAULT_K = 1000
DEFAULT_MERGE_THRESHOLD = 0.10
KMEANS_MAX_ITERATIONS = 100

LINGUISTIC_TASK_NAMES = {
    0: "none",
    1: "question_answering",
    2: "text_classification",
    3: "information_extraction",
    4: "summarization",
    5: "translation",
}


class NormalizationFailed(RuntimeError):
    """Backend returned an empty normalization."""


class ClassificationFailed(RuntimeError):
    """Linguistic classifier broke the one-key contract or the 0-5 range."""


class EmptyInput(ValueError):
    """Clustering needs at least one label."""


class UnmatchedIds(ValueError):
    """Annotation references a query id absent from the model labels."""


@dataclass(frozen=True)
class TaskLabel:
    query_id: str
    normalized: str
    cluster_id: int
    cluster_name: str
    linguistic_task: int

    def __post_init__(self) -> None:
        if self.linguistic_task not in LINGUISTIC_TASK_NAMES:
            raise ValueError(f"linguistic_task must be 0..5, got {self.linguistic_task}")


def normalize_medical(query: str, backend: TextBackend) -> str:
    """Distill one query into a task phrase via the normalization prompt.

    The backend either echoes a catalog entry byte-exact or generates a short
    imperative phrase; only trailing whitespace is stripped here.
    """
    if not query:
        raise ValueError("query must be non-empty")
    response = backend.complete("", prompts.task_normalization_prompt(query)).rstrip()
    if not response:
        raise NormalizationFailed(f"empty normalization for query {query[:80]!r}")
    return response


def classify_linguistic(query: str, backend: TextBackend) -> int:
    if not query:
        raise ValueError("query must be non-empty")
    response = backend.complete("", prompts.linguistic_classification_prompt(query))
    try:
        doc = json.loads(response.strip())
    except json.JSONDecodeError as exc:
        raise ClassificationFailed(f"not JSON: {response[:120]!r}") from exc
    if not isinstance(doc, dict) or set(doc) != {"number"}:
        raise ClassificationFailed(f"expected one 'number' key: {response[:120]!r}")
    number = doc["number"]
    if not isinstance(number, int) or number not in LINGUISTIC_TASK_NAMES:
        raise ClassificationFailed(f"task number out of range: {number!r}")
    return number


@dataclass
class ClusterModel:
    k: int
    seed: int
    merge_threshold: float
    centroids: np.ndarray  # one row per post-merge cluster
    labels: list[str]  # cluster name per cluster
    assignments: list[int]  # input index -> cluster id
    sizes: list[int] = field(default_factory=list)

    def cluster_of(self, index: int) -> tuple[int, str]:
        cid = self.assignments[index]
        return cid, self.labels[cid]


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return 1.0 - float(a @ b) / (na * nb)


def _nearest_label(centroid: np.ndarray, distinct: list[str], vectors: np.ndarray) -> str:
    d2 = ((vectors - centroid) ** 2).sum(axis=1)
    best = float(d2.min())
    candidates = [distinct[i] for i in range(len(distinct)) if d2[i] == best]
    return min(candidates)


def merge_clusters(
    points: np.ndarray, clusters: list[list[int]], threshold: float
) -> list[list[int]]:
    """Iteratively merge the closest centroid pair (cosine distance) while it
    is within the threshold; merged centroids are exact member means. Member
    index sets in, member index sets out."""
    clusters = [list(c) for c in clusters]
    centroids = [points[c].mean(axis=0) for c in clusters]
    while len(clusters) > 1:
        best_pair = None
        best_distance = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = _cosine_distance(centroids[i], centroids[j])
                if best_distance is None or d < best_distance:
                    best_distance = d
                    best_pair = (i, j)
        if best_distance is None or best_distance > threshold:
            break
        i, j = best_pair
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
        centroids[i] = points[clusters[i]].mean(axis=0)
        del centroids[j]
    return clusters


def cluster_tasks(
    normalized_labels: list[str],
    embedder: EmbeddingBackend,
    k: int = DEFAULT_K,
    seed: int = 0,
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
) -> ClusterModel:
    """Seeded K-means (k capped at the distinct-label count, max 100
    iterations, empty clusters re-seeded with the farthest point), then
    iterative smallest-first merging of centroids within the cosine-distance
    threshold, recomputing merged centroids as member means."""
    if not normalized_labels:
        raise EmptyInput("no labels to cluster")
    distinct = sorted(set(normalized_labels))
    vectors_by_label = {label: embedder.embed(label) for label in distinct}
    distinct_matrix = np.stack([vectors_by_label[label] for label in distinct])
    points = np.stack([vectors_by_label[label] for label in normalized_labels])
    n = len(points)
    k_eff = min(k, len(distinct))

    rng = random.Random(seed)
    init = rng.sample(range(len(distinct)), k_eff)
    centroids = distinct_matrix[init].copy()

    assign = np.zeros(n, dtype=int)
    for _ in range(KMEANS_MAX_ITERATIONS):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for c in range(k_eff):
            if not (new_assign == c).any():
                farthest = int(d2[np.arange(n), new_assign].argmax())
                centroids[c] = points[farthest]
                new_assign[farthest] = c
        changed = bool((new_assign != assign).any())
        assign = new_assign
        for c in range(k_eff):
            members = points[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        if not changed:
            break

    clusters = [list(np.flatnonzero(assign == c)) for c in range(k_eff)]
    clusters = merge_clusters(points, [c for c in clusters if c], merge_threshold)
    centroid_list = [points[c].mean(axis=0) for c in clusters]
    final_centroids = np.stack(centroid_list)
    names = [_nearest_label(c, distinct, distinct_matrix) for c in centroid_list]
    assignments = [0] * n
    for cid, members in enumerate(clusters):
        for m in members:
            assignments[m] = cid
    return ClusterModel(
        k=k,
        seed=seed,
        merge_threshold=merge_threshold,
        centroids=final_centroids,
        labels=names,
        assignments=assignments,
        sizes=[len(c) for c in clusters],
    )


@dataclass
class FeedbackRate:
    positive_rate: float
    n: int


def feedback_by_task(
    labels: list[TaskLabel], thumbs_by_query: dict[str, str]
) -> dict[str, dict[str, FeedbackRate]]:
    """Positive-feedback rate per medical task and per linguistic task; tasks
    with no feedback at all are omitted."""
    buckets: dict[str, dict[str, list[int]]] = {"medical": {}, "linguistic": {}}
    for label in labels:
        thumbs = thumbs_by_query.get(label.query_id)
        if thumbs not in ("up", "down"):
            continue
        vote = 1 if thumbs == "up" else 0
        buckets["medical"].setdefault(label.cluster_name, []).append(vote)
        task_name = LINGUISTIC_TASK_NAMES[label.linguistic_task]
        buckets["linguistic"].setdefault(task_name, []).append(vote)
    return {
        dimension: {
            task: FeedbackRate(positive_rate=sum(votes) / len(votes), n=len(votes))
            for task, votes in sorted(rates.items())
        }
        for dimension, rates in buckets.items()
    }


@dataclass(frozen=True)
class Annotation:
    query_id: str
    annotator: str
    judgment: str  # appropriate | inappropriate

    def __post_init__(self) -> None:
        if self.judgment not in ("appropriate", "inappropriate"):
            raise ValueError(f"judgment must be appropriate/inappropriate, got {self.judgment!r}")


def load_annotations(path) -> list[Annotation]:
    """Line-delimited annotation records: {query_id, annotator, judgment}."""
    from pathlib import Path

    annotations = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        annotations.append(
            Annotation(query_id=doc["query_id"], annotator=doc["annotator"], judgment=doc["judgment"])
        )
    return annotations


def agreement_rate(labeled_query_ids: set[str], annotations: list[Annotation]) -> float:
    """Average, across annotators, of the fraction of labels judged appropriate."""
    per_annotator: dict[str, list[int]] = {}
    for ann in annotations:
        if ann.query_id not in labeled_query_ids:
            raise UnmatchedIds(f"annotation references unknown query {ann.query_id!r}")
        per_annotator.setdefault(ann.annotator, []).append(
            1 if ann.judgment == "appropriate" else 0
        )
    if not per_annotator:
        return 0.0
    rates = [sum(v) / len(v) for _, v in sorted(per_annotator.items())]
    return sum(rates) / len(rates)
