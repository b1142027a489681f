"""Synthetic dataset generator for desk-scale verification.

Every class gets an anchor direction (exactly orthogonal scaled basis
vectors when the feature dimension allows, random unit directions
otherwise); the background is one more anchor. Scenes plant disjoint
axis-aligned rectangles of per-class anchors plus optional Gaussian
noise, so ground truth is exact by construction and the whole pipeline
can be checked end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureMap
from .fileio import DataError, load_manifest, save_manifest, write_feature_file

__all__ = ["SynthSpec", "SynthSpecError", "generate_dataset"]

_PLACEMENT_ATTEMPTS = 1000


class SynthSpecError(DataError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int
    n_patches: int = 32
    dim: int = 64
    scenes: int = 20
    objects_per_scene: int = 2
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise SynthSpecError("n_classes must be >= 1")
        if self.dim < 3:
            raise SynthSpecError("dim must be >= 3")
        if self.n_patches < 8:
            raise SynthSpecError("n_patches must be >= 8")
        if self.scenes < 1:
            raise SynthSpecError("scenes must be >= 1")
        if not 1 <= self.objects_per_scene <= self.n_classes:
            raise SynthSpecError("objects_per_scene must be in [1, n_classes]")
        if self.noise_sigma < 0:
            raise SynthSpecError("noise_sigma must be >= 0")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SynthSpecError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise SynthSpecError(f"{path}: spec must be a JSON object")
        known = {
            "n_classes",
            "n_patches",
            "dim",
            "scenes",
            "objects_per_scene",
            "noise_sigma",
            "seed",
        }
        unknown = set(raw) - known
        if unknown:
            raise SynthSpecError(f"{path}: unknown spec fields {sorted(unknown)}")
        if "n_classes" not in raw:
            raise SynthSpecError(f"{path}: spec requires n_classes")
        return cls(**raw)


def _anchors(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    # one anchor per class plus one for the background
    count = spec.n_classes + 1
    if count <= spec.dim:
        return np.eye(spec.dim, dtype=np.float64)[:count]
    vecs = rng.normal(size=(count, spec.dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _side_range(n_patches: int) -> tuple[int, int]:
    lo = max(2, n_patches // 8)
    hi = max(lo, n_patches // 4)
    return lo, hi


def _place_rects(
    spec: SynthSpec, count: int, rng: np.random.Generator
) -> list[tuple[int, int, int, int]]:
    """Sample `count` pairwise-disjoint (r0, c0, h, w) rectangles."""
    lo, hi = _side_range(spec.n_patches)
    occupied = np.zeros((spec.n_patches, spec.n_patches), dtype=bool)
    rects = []
    for _ in range(count):
        for attempt in range(_PLACEMENT_ATTEMPTS):
            h = int(rng.integers(lo, hi + 1))
            w = int(rng.integers(lo, hi + 1))
            r0 = int(rng.integers(0, spec.n_patches - h + 1))
            c0 = int(rng.integers(0, spec.n_patches - w + 1))
            if not occupied[r0 : r0 + h, c0 : c0 + w].any():
                occupied[r0 : r0 + h, c0 : c0 + w] = True
                rects.append((r0, c0, h, w))
                break
        else:
            raise SynthSpecError(
                f"could not place {count} disjoint objects on a "
                f"{spec.n_patches}x{spec.n_patches} grid"
            )
    return rects


def _scene(
    spec: SynthSpec,
    anchors: np.ndarray,
    class_indices: list[int],
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[tuple[int, int, int, int]]]:
    data = np.tile(anchors[spec.n_classes], (spec.n_patches, spec.n_patches, 1))
    rects = _place_rects(spec, len(class_indices), rng)
    for cls, (r0, c0, h, w) in zip(class_indices, rects):
        data[r0 : r0 + h, c0 : c0 + w] = anchors[cls]
    if spec.noise_sigma > 0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return data, rects


def _rect_bbox(rect: tuple[int, int, int, int]) -> list[int]:
    r0, c0, h, w = rect
    return [c0, r0, c0 + w - 1, r0 + h - 1]


def generate_dataset(spec: SynthSpec, out_dir) -> Path:
    """Generate feature files plus a manifest; returns the manifest path.

    Fully deterministic per seed: the same spec always produces
    bit-identical files. Supports are single-object scenes with an exact
    bbox prompt; queries plant ``objects_per_scene`` distinct classes in
    round-robin order so every class appears as a positive.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    anchors = _anchors(spec, rng)
    width = max(3, len(str(max(spec.n_classes, spec.scenes))))

    classes = [
        {"class_index": c, "label": f"object-{c:0{width}d}"} for c in range(spec.n_classes)
    ]
    supports = []
    for c in range(spec.n_classes):
        data, rects = _scene(spec, anchors, [c], rng)
        rel = f"supports/c-{c:0{width}d}.pfm"
        write_feature_file(out / rel, FeatureMap(data))
        supports.append(
            {
                "class_index": c,
                "feature_file": rel,
                "prompt": {"kind": "bbox", "bbox": _rect_bbox(rects[0])},
            }
        )

    queries = []
    for s in range(spec.scenes):
        class_indices = [
            (s * spec.objects_per_scene + t) % spec.n_classes
            for t in range(spec.objects_per_scene)
        ]
        data, rects = _scene(spec, anchors, class_indices, rng)
        query_id = f"q-{s:0{width}d}"
        rel = f"queries/{query_id}.pfm"
        write_feature_file(out / rel, FeatureMap(data))
        queries.append(
            {
                "query_id": query_id,
                "feature_file": rel,
                "truths": [
                    {"class_index": cls, "gt": {"kind": "bbox", "bbox": _rect_bbox(rect)}}
                    for cls, rect in zip(class_indices, rects)
                ],
            }
        )

    manifest_path = out / "manifest.json"
    save_manifest(
        {
            "version": 1,
            "n_patches": spec.n_patches,
            "dim": spec.dim,
            "classes": classes,
            "supports": supports,
            "queries": queries,
        },
        manifest_path,
    )
    load_manifest(manifest_path)  # self-check: emitted manifest must validate
    return manifest_path
