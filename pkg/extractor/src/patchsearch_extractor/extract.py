"""Image loading and feature-file emission."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .backbones import load_backbone
from .config import ExtractorConfig
from .formats import write_feature_file

__all__ = ["extract_features", "extract_many", "load_image"]


def load_image(path, input_size: int) -> np.ndarray:
    """RGB image resized to input_size x input_size, float in [0, 1]."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
    except OSError as exc:
        raise OSError(f"{path}: unreadable image: {exc}") from exc
    return np.asarray(img, dtype=np.float32) / 255.0


def extract_features(image_path, config: ExtractorConfig, out_path, backbone=None) -> Path:
    """Run one image through the frozen backbone and write a feature file."""
    if backbone is None:
        backbone = load_backbone(config)
    image = load_image(image_path, config.input_size)
    features, class_token = backbone.extract(image)
    write_feature_file(out_path, features, class_token)
    return Path(out_path)


def extract_many(
    image_paths: list, config: ExtractorConfig, out_paths: list, workers: int = 1
) -> list[Path]:
    """Batch extraction; one output file per image, no shared state."""
    if len(image_paths) != len(out_paths):
        raise ValueError("image_paths and out_paths must pair up")
    backbone = load_backbone(config)

    def one(pair):
        src, dst = pair
        return extract_features(src, config, dst, backbone=backbone)

    pairs = list(zip(image_paths, out_paths))
    if workers <= 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, pairs))
