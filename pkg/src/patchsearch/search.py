"""Per-query search: matching, candidate scoring, refinement, open-set decision.

One query runs an optional class-agnostic pre-pass (coordinate-augmented
k-means, shared across all classes), then per class: threshold matching
against the prototype, a split of the raw matches into connected
candidates, scoring, best-candidate selection, optional cluster
refinement and bounding-box extraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import Clustering, KMeansConfig, augment_with_coords, kmeans
from .core import (
    BBox,
    FeatureMap,
    PatchSet,
    bbox_of,
    connected_components,
    cosine_similarity,
    similarity_map,
)
from .enrollment import ClassModel

__all__ = [
    "SearchConfig",
    "SearchResult",
    "match_patches",
    "query_prepass",
    "refine_mask",
    "score_candidates",
    "search_query",
    "select_best",
]


@dataclass(frozen=True)
class SearchConfig:
    """Query-side knobs; ``class_threshold`` switches open-set acceptance on."""

    k_q: int = 30
    alpha_co: float = 200.0
    refine: bool = False
    seed: int = 0
    class_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.k_q < 1:
            raise ValueError("k_q must be >= 1")
        if self.alpha_co < 0:
            raise ValueError("alpha_co must be >= 0")


@dataclass
class SearchResult:
    """Outcome for one (query, class) pair.

    ``raw_mask`` is the best candidate before refinement; ``score`` is the
    maximum candidate score; ``accepted`` is set only when a class
    threshold is configured. ``candidates`` keeps every (mask, score)
    pair for identification metrics.
    """

    class_index: int
    score: float
    raw_mask: PatchSet
    refined_mask: PatchSet | None
    bbox: BBox | None
    accepted: bool | None
    candidates: list[tuple[PatchSet, float]]


def query_prepass(fmap: FeatureMap, config: SearchConfig) -> Clustering:
    """Class-agnostic clustering of the query map, shared by all classes."""
    points = augment_with_coords(fmap, config.alpha_co)
    return kmeans(points, KMeansConfig(k=config.k_q, seed=config.seed))


def match_patches(fmap: FeatureMap, model: ClassModel) -> PatchSet:
    """Patches whose similarity to the prototype exceeds the class threshold.

    Falls back to the single most similar patch when nothing clears the
    threshold (earliest row-major patch on ties).
    """
    sims = similarity_map(fmap, model.prototype)
    mask = sims > model.threshold
    if not mask.any():
        flat = int(np.argmax(sims))  # argmax takes the first (row-major) maximum
        mask = np.zeros_like(mask)
        mask[flat // fmap.n_patches, flat % fmap.n_patches] = True
    return PatchSet.from_array(mask)


def score_candidates(
    fmap: FeatureMap, model: ClassModel, raw: PatchSet
) -> list[tuple[PatchSet, float]]:
    """Split the raw match into connected candidates and score each one.

    A candidate's score is the cosine similarity between its mean feature
    and the class prototype; candidates come back in component order.
    """
    if raw.is_empty:
        raise ValueError("cannot score an empty raw match")
    out = []
    for comp in connected_components(raw):
        mean = fmap.data[comp.array].mean(axis=0)
        out.append((comp, cosine_similarity(mean, model.prototype)))
    return out


def select_best(candidates: list[tuple[PatchSet, float]]) -> tuple[PatchSet, float]:
    """Candidate with the maximum score; earliest wins ties."""
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    best_mask, best_score = candidates[0]
    for mask, score in candidates[1:]:
        if score > best_score:
            best_mask, best_score = mask, score
    return best_mask, best_score


def refine_mask(raw_best: PatchSet, prepass: Clustering) -> PatchSet:
    """Union of every pre-pass cluster that intersects the best candidate."""
    n = raw_best.n_patches
    if prepass.assignments.shape[0] != n * n:
        raise ValueError("pre-pass clustering does not match the mask grid")
    labels = prepass.assignments.reshape(n, n)
    touched = np.unique(labels[raw_best.array])
    return PatchSet.from_array(np.isin(labels, touched))


def search_query(
    fmap: FeatureMap, models: list[ClassModel], config: SearchConfig
) -> list[SearchResult]:
    """Run the full per-query pipeline against every enrolled class.

    The pre-pass is computed once and shared across classes. Scores are
    always computed from the unrefined candidate; refinement only grows
    the reported mask.
    """
    for model in models:
        if model.prototype.size != fmap.dim:
            raise ValueError(
                f"class {model.class_index} prototype dim {model.prototype.size} "
                f"does not match feature dim {fmap.dim}"
            )
    prepass = query_prepass(fmap, config) if config.refine else None
    results = []
    for model in models:
        raw = match_patches(fmap, model)
        candidates = score_candidates(fmap, model, raw)
        best_mask, best_score = select_best(candidates)
        refined = refine_mask(best_mask, prepass) if prepass is not None else None
        final = refined if refined is not None else best_mask
        accepted = None
        if config.class_threshold is not None:
            accepted = bool(best_score > config.class_threshold)
        results.append(
            SearchResult(
                class_index=model.class_index,
                score=best_score,
                raw_mask=best_mask,
                refined_mask=refined,
                bbox=bbox_of(final),
                accepted=accepted,
                candidates=candidates,
            )
        )
    return results
