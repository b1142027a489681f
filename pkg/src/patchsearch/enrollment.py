"""One-shot enrollment: turn a support feature map plus a location prompt
into a per-class model (prototype + adaptive similarity threshold).

A bounding-box prompt is first converted into an approximate segmentation
by clustering the box-and-border patch features and discarding every
cluster that touches the border ring; a mask prompt is used as-is.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .clustering import KMeansConfig, kmeans
from .core import (
    BBox,
    FeatureMap,
    PatchSet,
    percentile,
    rect_patches,
    similarity_map,
)

__all__ = [
    "ClassModel",
    "SupportPrompt",
    "adaptive_threshold",
    "bbox_patches",
    "build_prototype",
    "enroll",
    "seg_from_bbox",
]

logger = logging.getLogger(__name__)

DEFAULT_SUPPORT_CLUSTERS = 5


@dataclass(frozen=True)
class SupportPrompt:
    """Location prompt for one support image: a bbox or a patch mask."""

    kind: str
    label: str
    class_index: int
    bbox: BBox | None = None
    mask: PatchSet | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("bbox", "mask"):
            raise ValueError(f"prompt kind must be 'bbox' or 'mask', got {self.kind!r}")
        if self.kind == "bbox" and (self.bbox is None or self.mask is not None):
            raise ValueError("bbox prompt must carry exactly a bbox")
        if self.kind == "mask" and (self.mask is None or self.bbox is not None):
            raise ValueError("mask prompt must carry exactly a mask")
        if self.class_index < 0:
            raise ValueError("class_index must be >= 0")


@dataclass
class ClassModel:
    """An enrolled personal class: prototype, threshold and support mask."""

    class_index: int
    label: str
    prototype: np.ndarray
    threshold: float
    support_seg: PatchSet

    def __post_init__(self) -> None:
        self.prototype = np.asarray(self.prototype, dtype=np.float64).ravel()
        if float(np.linalg.norm(self.prototype)) == 0.0:
            raise ValueError("class prototype must have nonzero norm")
        if not np.isfinite(self.threshold):
            raise ValueError("class threshold must be finite")


def bbox_patches(bbox: BBox, n_patches: int) -> tuple[PatchSet, PatchSet]:
    """Patches covered by a box, and the ring of patches 8-adjacent to it.

    Returns ``(inside, border)``; the border is clipped to the grid and
    disjoint from the inside.
    """
    inside = rect_patches(bbox, n_patches)
    ring = np.zeros((n_patches, n_patches), dtype=bool)
    r0 = max(bbox.y_min - 1, 0)
    r1 = min(bbox.y_max + 1, n_patches - 1)
    c0 = max(bbox.x_min - 1, 0)
    c1 = min(bbox.x_max + 1, n_patches - 1)
    ring[r0 : r1 + 1, c0 : c1 + 1] = True
    ring &= ~inside.array
    return inside, PatchSet.from_array(ring)


def seg_from_bbox(fmap: FeatureMap, bbox: BBox, k_s: int = DEFAULT_SUPPORT_CLUSTERS, seed: int = 0) -> PatchSet:
    """Approximate object segmentation from a bounding-box prompt.

    Clusters the features of the box plus its border ring (no coordinate
    augmentation), keeps the clusters that contain no border patch, and
    intersects with the box. Falls back to the whole box when every
    cluster touches the border (degenerate scenes).
    """
    if k_s < 2:
        raise ValueError("k_s must be >= 2")
    inside, border = bbox_patches(bbox, fmap.n_patches)
    region = inside | border
    coords = np.argwhere(region.array)  # row-major, deterministic point order
    points = fmap.data[coords[:, 0], coords[:, 1]]
    clustering = kmeans(points, KMeansConfig(k=k_s, seed=seed))

    border_arr = border.array
    is_border = border_arr[coords[:, 0], coords[:, 1]]
    keep = np.zeros(fmap.n_patches * fmap.n_patches, dtype=bool)
    flat_idx = coords[:, 0] * fmap.n_patches + coords[:, 1]
    for r in range(clustering.k):
        in_cluster = clustering.assignments == r
        if not is_border[in_cluster].any():
            keep[flat_idx[in_cluster]] = True
    seg = PatchSet.from_array(keep.reshape(fmap.n_patches, fmap.n_patches)) & inside
    if seg.is_empty:
        logger.warning(
            "every support cluster touches the bbox border; falling back to the whole box"
        )
        return inside
    return seg


def build_prototype(fmap: FeatureMap, seg: PatchSet) -> np.ndarray:
    """Elementwise mean feature over the segmentation patches."""
    if seg.is_empty:
        raise ValueError("cannot build a prototype from an empty segmentation")
    return fmap.data[seg.array].mean(axis=0)


def adaptive_threshold(fmap: FeatureMap, seg: PatchSet, prototype) -> float:
    """Per-class similarity cutoff from support patch statistics.

    In similarity units: ptr is the 5th percentile of the positive-patch
    similarities (drops the 5% least similar positives) and ntr the 95th
    percentile of the negative-patch similarities (drops the 5% most
    similar negatives); the threshold is ``max(ptr, ntr)``. When the
    segmentation covers the whole grid there are no negatives and ptr
    alone is returned.
    """
    if seg.is_empty:
        raise ValueError("adaptive threshold needs a non-empty segmentation")
    sims = similarity_map(fmap, prototype)
    psim = sims[seg.array]
    ptr = percentile(psim, 5)
    nseg = ~seg.array
    if not nseg.any():
        return ptr
    ntr = percentile(sims[nseg], 95)
    return max(ptr, ntr)


def enroll(
    fmap: FeatureMap,
    prompt: SupportPrompt,
    k_s: int = DEFAULT_SUPPORT_CLUSTERS,
    seed: int = 0,
) -> ClassModel:
    """Build the ClassModel for one support image and prompt."""
    if prompt.kind == "bbox":
        seg = seg_from_bbox(fmap, prompt.bbox, k_s=k_s, seed=seed)
    else:
        if prompt.mask.n_patches != fmap.n_patches:
            raise ValueError("mask prompt grid does not match the feature map")
        if prompt.mask.is_empty:
            raise ValueError("mask prompt is empty")
        seg = prompt.mask
    prototype = build_prototype(fmap, seg)
    threshold = adaptive_threshold(fmap, seg, prototype)
    return ClassModel(
        class_index=prompt.class_index,
        label=prompt.label,
        prototype=prototype,
        threshold=threshold,
        support_seg=seg,
    )
