"""Writers for the patchsearch wire formats.

This package talks to the engine exclusively through its published file
formats, so the serializers here are standalone implementations of those
formats, not imports from the engine:

* feature file: 7-byte magic ``PFMAP\\x00\\x01``, a flags byte (0x01 marks
  a trailing class-token block), uint32-LE n_patches and dim, then
  ``n_patches**2 * dim`` float32-LE values row-major, then ``dim`` float32
  class-token values when flagged;
* dataset manifest: version-1 JSON with classes / supports / queries;
* patch masks: base64 of the row-major bit-packed grid, MSB-first bytes.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC_PREFIX = b"PFMAP\x00\x01"
FLAG_CLASS_TOKEN = 0x01
MANIFEST_VERSION = 1


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_feature_file(path, features: np.ndarray, class_token: np.ndarray | None = None) -> None:
    """Serialize an (n, n, dim) float feature grid, plus an optional token."""
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[0] != features.shape[1]:
        raise ValueError(f"expected an (n, n, dim) grid, got shape {features.shape}")
    if not np.isfinite(features).all():
        raise ValueError("features contain NaN or Inf")
    n, _, dim = features.shape
    flags = 0
    tail = b""
    if class_token is not None:
        token = np.asarray(class_token, dtype="<f4").ravel()
        if token.size != dim:
            raise ValueError("class token dim does not match the feature dim")
        flags = FLAG_CLASS_TOKEN
        tail = token.tobytes()
    blob = (
        MAGIC_PREFIX
        + bytes([flags])
        + struct.pack("<II", n, dim)
        + features.astype("<f4").tobytes()
        + tail
    )
    atomic_write_bytes(Path(path), blob)


def mask_to_b64(mask: np.ndarray) -> str:
    mask = np.asarray(mask, dtype=bool)
    return base64.b64encode(np.packbits(mask.reshape(-1)).tobytes()).decode("ascii")


def write_manifest(
    path,
    *,
    n_patches: int,
    dim: int,
    classes: list[dict],
    supports: list[dict],
    queries: list[dict],
    provenance: dict | None = None,
) -> None:
    doc = {
        "version": MANIFEST_VERSION,
        "n_patches": n_patches,
        "dim": dim,
        "classes": classes,
        "supports": supports,
        "queries": queries,
    }
    if provenance:
        doc["provenance"] = provenance
    atomic_write_bytes(Path(path), (json.dumps(doc, indent=2) + "\n").encode("utf-8"))
