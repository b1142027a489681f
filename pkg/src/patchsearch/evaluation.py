"""Metrics for localization (mIoU) and open-set identification (ACC, cPREC),
plus a wall-clock benchmark helper for the pipeline stages."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .core import PatchSet, percentile, rect_patches
from .search import SearchResult

__all__ = [
    "EvalRecord",
    "MetricsReport",
    "average_precision",
    "benchmark",
    "collect_class_scores",
    "compute_acc",
    "compute_cprec",
    "compute_miou",
    "iou",
]

logger = logging.getLogger(__name__)


@dataclass
class EvalRecord:
    """One (query image, ground-truth object) pair; cluttered scenes yield
    several records sharing a query_id."""

    query_id: str
    class_index: int
    gt_mask: PatchSet
    predicted: SearchResult | None


@dataclass
class MetricsReport:
    miou: float
    acc: float
    cprec: float
    per_class_ap: list[float]
    n_records: int
    timing: dict[str, dict[str, float]] = field(default_factory=dict)


def iou(a: PatchSet, b: PatchSet) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    if a.n_patches != b.n_patches:
        raise ValueError("IoU of masks on different grids")
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union


def _predicted_mask(result: SearchResult | None, n_patches: int, mode: str) -> PatchSet:
    if result is None:
        return PatchSet(n_patches)
    if mode == "bbox":
        if result.bbox is None:
            return PatchSet(n_patches)
        return rect_patches(result.bbox, n_patches)
    # mask mode: the refined mask when refinement ran, else the raw match
    if result.refined_mask is not None:
        return result.refined_mask
    return result.raw_mask


def compute_miou(records: list[EvalRecord], mode: str = "mask") -> float:
    """Mean IoU between predictions and ground truth over all records.

    ``mode`` selects mask-level or bbox-level comparison; a record whose
    class was never searched scores 0.
    """
    if mode not in ("mask", "bbox"):
        raise ValueError(f"mode must be 'mask' or 'bbox', got {mode!r}")
    if not records:
        raise ValueError("compute_miou needs at least one record")
    total = 0.0
    for rec in records:
        pred = _predicted_mask(rec.predicted, rec.gt_mask.n_patches, mode)
        total += iou(pred, rec.gt_mask)
    return total / len(records)


def _score_at_gt(result: SearchResult, gt_mask: PatchSet) -> float:
    """Score of the candidate with the highest ground-truth intersection,
    0.0 when no candidate intersects."""
    best_overlap = 0
    best_score = 0.0
    for mask, score in result.candidates:
        overlap = len(mask & gt_mask)
        if overlap > best_overlap:
            best_overlap = overlap
            best_score = score
    return best_score


def compute_acc(
    records: list[EvalRecord], all_results: Mapping[str, list[SearchResult]]
) -> float:
    """Identification accuracy: fraction of records where the ground-truth
    class has the strictly highest near-ground-truth candidate score
    (ties count as incorrect)."""
    if not records:
        raise ValueError("compute_acc needs at least one record")
    correct = 0
    for rec in records:
        results = all_results.get(rec.query_id)
        if results is None:
            raise ValueError(f"no search results for query {rec.query_id!r}")
        by_class = {r.class_index: r for r in results}
        if rec.class_index not in by_class:
            raise ValueError(
                f"query {rec.query_id!r} has no result for class {rec.class_index}"
            )
        scores = {c: _score_at_gt(r, rec.gt_mask) for c, r in by_class.items()}
        gt_score = scores[rec.class_index]
        if all(gt_score > s for c, s in scores.items() if c != rec.class_index):
            correct += 1
    return correct / len(records)


def average_precision(entries: list[tuple[float, bool]]) -> float:
    """Step-wise interpolated AP over a descending-score ranking.

    Items with equal scores are grouped and contribute one precision/recall
    step together (stable order within a group). Requires at least one
    positive entry.
    """
    positives = sum(1 for _, pos in entries if pos)
    if positives == 0:
        raise ValueError("average precision needs at least one positive entry")
    order = sorted(range(len(entries)), key=lambda i: -entries[i][0])
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and entries[order[j]][0] == entries[order[i]][0]:
            tp += 1 if entries[order[j]][1] else 0
            seen += 1
            j += 1
        recall = tp / positives
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return ap


def compute_cprec(
    records_by_class: Mapping[int, list[tuple[float, bool]]]
) -> tuple[float, list[float]]:
    """Mean per-class AP over classes with at least one positive.

    Classes without positives are excluded (with a warning). Returns the
    mean and the per-class APs ordered by ascending class index.
    """
    aps = []
    for class_index in sorted(records_by_class):
        entries = records_by_class[class_index]
        if not entries:
            raise ValueError(f"class {class_index} has no score entries")
        if not any(pos for _, pos in entries):
            logger.warning("class %d has no positive examples; excluded from cPREC", class_index)
            continue
        aps.append(average_precision(entries))
    if not aps:
        raise ValueError("no class has a positive example")
    return sum(aps) / len(aps), aps


def collect_class_scores(
    records: list[EvalRecord], all_results: Mapping[str, list[SearchResult]]
) -> dict[int, list[tuple[float, bool]]]:
    """Build the per-class (score, is_positive) lists feeding compute_cprec.

    On a query containing the class, the score is the near-ground-truth
    candidate score of each matching record; on a query without it, the
    class's best overall candidate score counts as a negative.
    """
    class_indices = sorted(
        {r.class_index for results in all_results.values() for r in results}
    )
    recs_by_query: dict[str, list[EvalRecord]] = {}
    for rec in records:
        recs_by_query.setdefault(rec.query_id, []).append(rec)
    out: dict[int, list[tuple[float, bool]]] = {c: [] for c in class_indices}
    for query_id, results in all_results.items():
        by_class = {r.class_index: r for r in results}
        for c in class_indices:
            if c not in by_class:
                raise ValueError(f"query {query_id!r} has no result for class {c}")
            matching = [r for r in recs_by_query.get(query_id, []) if r.class_index == c]
            if matching:
                for rec in matching:
                    out[c].append((_score_at_gt(by_class[c], rec.gt_mask), True))
            else:
                out[c].append((by_class[c].score, False))
    return out


def benchmark(
    stages: Mapping[str, Callable[[], object]], warmup: int = 1, iters: int = 10
) -> dict[str, dict[str, float]]:
    """Wall-clock timing of stage closures on the monotonic clock.

    Each stage runs ``warmup`` discarded times, then ``iters`` measured
    times; reports mean/p50/p95 in milliseconds per call.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    out: dict[str, dict[str, float]] = {}
    for name, fn in stages.items():
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(iters):
            t0 = time.perf_counter()
            fn()
            samples.append((time.perf_counter() - t0) * 1e3)
        out[name] = {
            "mean_ms": sum(samples) / len(samples),
            "p50_ms": percentile(samples, 50),
            "p95_ms": percentile(samples, 95),
        }
    return out
