"""Pixel-space annotations to patch-grid manifests.

The any-overlap rule is used throughout: a patch is positive as soon as
the (resize-scaled) footprint of any annotated pixel intersects it.
Images are resized to input_size x input_size, so the two image axes are
scaled independently.

Recognized dataset layouts:

* ``perseg``: ``Images/<label>/<name>.<ext>`` with a binary mask
  ``Annotations/<label>/<name>.png`` per image (nonzero = object). The
  first image of each label (sorted by name) becomes the support with a
  mask prompt; the rest become queries.
* ``icub``: ``<label>/<name>.<ext>`` with a sidecar ``<name>.txt`` holding
  one ``x_min y_min x_max y_max`` pixel bounding box (inclusive). The
  first image per label is the support with a bbox prompt.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import load_backbone
from .config import ExtractorConfig
from .extract import extract_features
from .formats import mask_to_b64, write_manifest

__all__ = [
    "LayoutError",
    "bbox_to_patch_bbox",
    "build_manifest",
    "mask_to_patch_mask",
    "pixel_axis_overlap",
]

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".webp")


class LayoutError(ValueError):
    pass


def pixel_axis_overlap(length: int, input_size: int, patch_size: int) -> np.ndarray:
    """Boolean (n_patches, length) matrix: does pixel x touch patch p?

    Pixel x of an axis of `length` pixels covers [x*s, (x+1)*s) after
    resizing by s = input_size / length; patch p covers
    [p*patch_size, (p+1)*patch_size).
    """
    if length < 1:
        raise ValueError("axis length must be >= 1")
    n = input_size // patch_size
    scale = input_size / length
    x = np.arange(length)
    lo = np.floor(x * scale / patch_size).astype(int)
    hi = np.ceil((x + 1) * scale / patch_size).astype(int) - 1
    lo = np.clip(lo, 0, n - 1)
    hi = np.clip(hi, 0, n - 1)
    out = np.zeros((n, length), dtype=bool)
    for px in range(length):
        out[lo[px] : hi[px] + 1, px] = True
    return out


def mask_to_patch_mask(mask: np.ndarray, config: ExtractorConfig) -> np.ndarray:
    """Any-overlap rasterization of a pixel mask onto the patch grid."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected a 2-D pixel mask, got shape {mask.shape}")
    rows = pixel_axis_overlap(mask.shape[0], config.input_size, config.patch_size)
    cols = pixel_axis_overlap(mask.shape[1], config.input_size, config.patch_size)
    hit = rows.astype(np.int32) @ (mask != 0).astype(np.int32) @ cols.T.astype(np.int32)
    return hit > 0


def bbox_to_patch_bbox(
    bbox: tuple[int, int, int, int], width: int, height: int, config: ExtractorConfig
) -> list[int]:
    """Inclusive pixel bbox -> inclusive patch bbox under the any-overlap rule."""
    x_min, y_min, x_max, y_max = bbox
    if not (0 <= x_min <= x_max < width and 0 <= y_min <= y_max < height):
        raise ValueError(f"bbox {bbox} outside a {width}x{height} image")
    n = config.n_patches
    sx = config.input_size / width
    sy = config.input_size / height

    def span(lo_px: int, hi_px: int, scale: float) -> tuple[int, int]:
        lo = int(np.floor(lo_px * scale / config.patch_size))
        hi = int(np.ceil((hi_px + 1) * scale / config.patch_size)) - 1
        return max(lo, 0), min(hi, n - 1)

    px_min, px_max = span(x_min, x_max, sx)
    py_min, py_max = span(y_min, y_max, sy)
    return [px_min, py_min, px_max, py_max]


@dataclass(frozen=True)
class _Item:
    label: str
    image: Path
    mask_png: Path | None = None
    bbox_txt: Path | None = None


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in _IMAGE_EXTS)


def _walk_perseg(root: Path) -> dict[str, list[_Item]]:
    images = root / "Images"
    annotations = root / "Annotations"
    if not images.is_dir() or not annotations.is_dir():
        raise LayoutError(f"{root}: perseg layout needs Images/ and Annotations/")
    by_label: dict[str, list[_Item]] = {}
    for label_dir in sorted(p for p in images.iterdir() if p.is_dir()):
        items = []
        for image in _list_images(label_dir):
            mask_png = annotations / label_dir.name / (image.stem + ".png")
            if not mask_png.is_file():
                raise LayoutError(f"missing annotation file {mask_png}")
            items.append(_Item(label=label_dir.name, image=image, mask_png=mask_png))
        if items:
            by_label[label_dir.name] = items
    if not by_label:
        raise LayoutError(f"{root}: no annotated images found")
    return by_label


def _walk_icub(root: Path) -> dict[str, list[_Item]]:
    by_label: dict[str, list[_Item]] = {}
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        items = []
        for image in _list_images(label_dir):
            bbox_txt = image.with_suffix(".txt")
            if not bbox_txt.is_file():
                raise LayoutError(f"missing annotation file {bbox_txt}")
            items.append(_Item(label=label_dir.name, image=image, bbox_txt=bbox_txt))
        if items:
            by_label[label_dir.name] = items
    if not by_label:
        raise LayoutError(f"{root}: no annotated images found")
    return by_label


def _read_bbox(path: Path) -> tuple[int, int, int, int]:
    parts = path.read_text().split()
    if len(parts) != 4:
        raise LayoutError(f"{path}: expected 'x_min y_min x_max y_max'")
    x0, y0, x1, y1 = (int(float(v)) for v in parts)
    return x0, y0, x1, y1


def _image_size(path: Path) -> tuple[int, int]:
    with Image.open(path) as img:
        return img.size  # (width, height)


def _gt_for(item: _Item, config: ExtractorConfig) -> dict:
    if item.mask_png is not None:
        with Image.open(item.mask_png) as img:
            mask = np.asarray(img.convert("L"))
        patch_mask = mask_to_patch_mask(mask, config)
        if not patch_mask.any():
            raise LayoutError(f"{item.mask_png}: annotation rasterizes to an empty mask")
        return {"kind": "mask", "mask": mask_to_b64(patch_mask)}
    width, height = _image_size(item.image)
    bbox = bbox_to_patch_bbox(_read_bbox(item.bbox_txt), width, height, config)
    return {"kind": "bbox", "bbox": bbox}


def build_manifest(
    dataset_dir, layout: str, config: ExtractorConfig, out_dir, workers: int = 1
) -> Path:
    """Extract features for a whole dataset and write a manifest.

    The first image of every class (sorted) becomes the one-shot support;
    every other image becomes a query whose ground truth is the
    rasterized annotation.
    """
    root = Path(dataset_dir)
    out = Path(out_dir)
    if layout == "perseg":
        by_label = _walk_perseg(root)
    elif layout == "icub":
        by_label = _walk_icub(root)
    else:
        raise LayoutError(f"unknown layout {layout!r} (expected 'perseg' or 'icub')")

    backbone = load_backbone(config)
    classes = []
    supports = []
    queries = []
    to_extract: list[tuple[Path, Path]] = []
    for class_index, label in enumerate(sorted(by_label)):
        classes.append({"class_index": class_index, "label": label})
        support, *rest = by_label[label]
        # feature-file stems double as query ids downstream, so they embed
        # the label to stay unique across classes
        rel = f"features/{label}__{support.image.stem}.pfm"
        to_extract.append((support.image, out / rel))
        supports.append(
            {"class_index": class_index, "feature_file": rel, "prompt": _gt_for(support, config)}
        )
        for item in rest:
            query_id = f"{label}__{item.image.stem}"
            rel = f"features/{query_id}.pfm"
            to_extract.append((item.image, out / rel))
            queries.append(
                {
                    "query_id": query_id,
                    "feature_file": rel,
                    "truths": [{"class_index": class_index, "gt": _gt_for(item, config)}],
                }
            )

    def extract_one(pair: tuple[Path, Path]) -> None:
        extract_features(pair[0], config, pair[1], backbone=backbone)

    if workers <= 1:
        for pair in to_extract:
            extract_one(pair)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(extract_one, to_extract))

    manifest_path = out / "manifest.json"
    write_manifest(
        manifest_path,
        n_patches=config.n_patches,
        dim=backbone.dim,
        classes=classes,
        supports=supports,
        queries=queries,
        provenance={
            "backbone_id": config.backbone_id,
            "input_size": config.input_size,
            "patch_size": config.patch_size,
            "resize": "bilinear RGB to input_size^2",
            "layout": layout,
        },
    )
    return manifest_path
