"""Frozen feature-extraction backbones.

Two families are registered:

* ``dinov2-vits14`` / ``dinov2-vitb14`` / ``dinov2-vitl14``: self-supervised
  vision transformers loaded frozen from torch hub (needs torch and
  network/cache access to the published weights);
* ``patch-moments``: a dependency-free per-patch color/gradient statistics
  featurizer. It is no substitute for a learned backbone but is fully
  deterministic and runs anywhere, which makes it the test and smoke-check
  backbone.

Every backbone maps a resized RGB image to an (n, n, dim) patch feature
grid plus a dim-vector image-level token, deterministically.
"""

from __future__ import annotations

import numpy as np

from .config import ExtractorConfig

__all__ = ["BackboneLoadError", "PatchMomentsBackbone", "load_backbone"]

_DINO_HUB_REPO = "facebookresearch/dinov2"
_DINO_MODELS = {
    "dinov2-vits14": "dinov2_vits14",
    "dinov2-vitb14": "dinov2_vitb14",
    "dinov2-vitl14": "dinov2_vitl14",
}
# standard ImageNet normalization used by the published DINOv2 weights
_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class BackboneLoadError(RuntimeError):
    pass


class PatchMomentsBackbone:
    """Per-patch color moments and gradient energy, 8 dims per patch."""

    dim = 8

    def __init__(self, config: ExtractorConfig):
        self.n_patches = config.n_patches
        self.patch_size = config.patch_size

    def _stats(self, block: np.ndarray) -> np.ndarray:
        # block is (h, w, 3) in [0, 1]; the 1e-3 floor on the color moments
        # keeps all-black regions away from a zero-norm feature vector
        gray = block.mean(axis=2)
        gx = np.abs(np.diff(gray, axis=1)).mean() if gray.shape[1] > 1 else 0.0
        gy = np.abs(np.diff(gray, axis=0)).mean() if gray.shape[0] > 1 else 0.0
        return np.concatenate(
            [
                block.mean(axis=(0, 1)) + 1e-3,
                block.std(axis=(0, 1)) + 1e-3,
                [gx, gy],
            ]
        )

    def extract(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n, ps = self.n_patches, self.patch_size
        features = np.empty((n, n, self.dim), dtype=np.float64)
        for i in range(n):
            for j in range(n):
                block = image[i * ps : (i + 1) * ps, j * ps : (j + 1) * ps]
                features[i, j] = self._stats(block)
        return features, self._stats(image)


class _DinoV2Backbone:
    """Frozen DINOv2 patch tokens via torch hub."""

    def __init__(self, config: ExtractorConfig, hub_name: str):
        try:
            import torch
        except ImportError as exc:
            raise BackboneLoadError(
                f"{config.backbone_id} needs torch (install the 'dino' extra)"
            ) from exc
        self._torch = torch
        try:
            self.model = torch.hub.load(_DINO_HUB_REPO, hub_name)
        except Exception as exc:
            raise BackboneLoadError(
                f"could not load {config.backbone_id} from torch hub: {exc}"
            ) from exc
        self.model.eval()
        self.device = config.device
        self.model.to(self.device)
        self.n_patches = config.n_patches
        self.dim = self.model.embed_dim

    def extract(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        torch = self._torch
        arr = (image.astype(np.float32) - _IMAGENET_MEAN) / _IMAGENET_STD
        tensor = torch.from_numpy(arr.transpose(2, 0, 1)[None]).to(self.device)
        with torch.no_grad():
            out = self.model.forward_features(tensor)
        patches = out["x_norm_patchtokens"][0].cpu().numpy()
        token = out["x_norm_clstoken"][0].cpu().numpy()
        n = self.n_patches
        return patches.reshape(n, n, -1).astype(np.float64), token.astype(np.float64)


def load_backbone(config: ExtractorConfig):
    if config.backbone_id == "patch-moments":
        return PatchMomentsBackbone(config)
    if config.backbone_id in _DINO_MODELS:
        return _DinoV2Backbone(config, _DINO_MODELS[config.backbone_id])
    raise BackboneLoadError(
        f"unknown backbone {config.backbone_id!r}; available: "
        f"{['patch-moments', *sorted(_DINO_MODELS)]}"
    )
