"""Grid-level primitives shared by the whole engine.

Conventions used everywhere: patches are addressed as ``(row, col)`` with
row 0 at the top of the image, and bounding boxes serialize as
``(x_min, y_min, x_max, y_max)`` with ``x = col`` and ``y = row``, all
inclusive and at patch resolution. A feature map flattened row-major maps
patch ``(i, j)`` to index ``i * n_patches + j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

__all__ = [
    "BBox",
    "DegenerateInputError",
    "FeatureMap",
    "PatchSet",
    "bbox_of",
    "connected_components",
    "cosine_similarity",
    "percentile",
    "rect_patches",
    "similarity_map",
]


class DegenerateInputError(ValueError):
    """A computation was asked of an input it is not defined for."""


class FeatureMap:
    """A square grid of D-dimensional patch feature vectors for one image.

    ``data[i, j]`` is the feature vector of the patch in row ``i``,
    column ``j``. The tensor is validated (square, finite, non-empty) and
    frozen on construction.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected an (n, n, dim) tensor, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[2] < 1:
            raise ValueError("n_patches and dim must both be >= 1")
        if not np.isfinite(arr).all():
            raise ValueError("feature map contains NaN or Inf values")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def n_patches(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[2]

    @property
    def flat(self) -> np.ndarray:
        """Row-major (n_patches**2, dim) view; index i*n + j is patch (i, j)."""
        return self._data.reshape(-1, self._data.shape[2])

    def __repr__(self) -> str:
        return f"FeatureMap(n_patches={self.n_patches}, dim={self.dim})"


class PatchSet:
    """An immutable set of (row, col) patch indices on an n x n grid.

    Backed by a boolean mask; equivalently a bitmask of n**2 bits in
    row-major order, MSB-first within each byte (``to_bitmask``). Set
    algebra (``|``, ``&``, ``-``) is exact and grid-checked.
    """

    __slots__ = ("_mask",)

    def __init__(self, n_patches: int, members: Iterable[tuple[int, int]] = ()) -> None:
        n = int(n_patches)
        if n < 1:
            raise ValueError("n_patches must be >= 1")
        mask = np.zeros((n, n), dtype=bool)
        for r, c in members:
            r, c = int(r), int(c)
            if not (0 <= r < n and 0 <= c < n):
                raise ValueError(f"patch ({r}, {c}) outside {n}x{n} grid")
            mask[r, c] = True
        mask.setflags(write=False)
        self._mask = mask

    @classmethod
    def from_array(cls, mask) -> "PatchSet":
        arr = np.array(mask, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"expected a square boolean mask, got shape {arr.shape}")
        obj = cls.__new__(cls)
        arr.setflags(write=False)
        obj._mask = arr
        return obj

    @classmethod
    def full(cls, n_patches: int) -> "PatchSet":
        return cls.from_array(np.ones((n_patches, n_patches), dtype=bool))

    @classmethod
    def from_bitmask(cls, n_patches: int, raw: bytes) -> "PatchSet":
        """Inverse of ``to_bitmask``; trailing pad bits must be zero."""
        n = int(n_patches)
        expected = (n * n + 7) // 8
        if len(raw) != expected:
            raise ValueError(f"bitmask for {n}x{n} grid needs {expected} bytes, got {len(raw)}")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
        if bits[n * n :].any():
            raise ValueError("bitmask has nonzero padding bits")
        return cls.from_array(bits[: n * n].astype(bool).reshape(n, n))

    def to_bitmask(self) -> bytes:
        return np.packbits(self._mask.reshape(-1)).tobytes()

    @property
    def n_patches(self) -> int:
        return self._mask.shape[0]

    @property
    def array(self) -> np.ndarray:
        return self._mask

    @property
    def members(self) -> frozenset[tuple[int, int]]:
        return frozenset((int(r), int(c)) for r, c in np.argwhere(self._mask))

    @property
    def is_empty(self) -> bool:
        return not self._mask.any()

    def _check_grid(self, other: "PatchSet") -> None:
        if self.n_patches != other.n_patches:
            raise ValueError(
                f"grid mismatch: {self.n_patches} vs {other.n_patches} patches per side"
            )

    def __or__(self, other: "PatchSet") -> "PatchSet":
        self._check_grid(other)
        return PatchSet.from_array(self._mask | other._mask)

    def __and__(self, other: "PatchSet") -> "PatchSet":
        self._check_grid(other)
        return PatchSet.from_array(self._mask & other._mask)

    def __sub__(self, other: "PatchSet") -> "PatchSet":
        self._check_grid(other)
        return PatchSet.from_array(self._mask & ~other._mask)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchSet):
            return NotImplemented
        return self.n_patches == other.n_patches and bool(
            np.array_equal(self._mask, other._mask)
        )

    def __hash__(self) -> int:
        return hash((self.n_patches, self.to_bitmask()))

    def __len__(self) -> int:
        return int(self._mask.sum())

    def __bool__(self) -> bool:
        return not self.is_empty

    def __contains__(self, patch: tuple[int, int]) -> bool:
        r, c = patch
        return 0 <= r < self.n_patches and 0 <= c < self.n_patches and bool(self._mask[r, c])

    def __iter__(self) -> Iterator[tuple[int, int]]:
        for r, c in np.argwhere(self._mask):
            yield (int(r), int(c))

    def __repr__(self) -> str:
        return f"PatchSet(n_patches={self.n_patches}, size={len(self)})"


@dataclass(frozen=True)
class BBox:
    """Inclusive patch-grid bounding box, serialized (x_min, y_min, x_max, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError(f"bbox coordinates must be >= 0, got {self.as_tuple()}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"bbox corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def cosine_similarity(u, v) -> float:
    """Cosine similarity u.v / (|u||v|), clipped to [-1, 1].

    Raises DegenerateInputError on a zero-norm input, for which the value
    is undefined; never returns NaN.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size < 1 or u.size != v.size:
        raise ValueError(f"vectors must share a dimension >= 1, got {u.size} and {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def percentile(values, p: float) -> float:
    """Lower nearest-rank percentile.

    Sorts ascending and returns the element at index
    ``floor(p / 100 * (len - 1))``; interpolation-free and therefore
    identical across platforms.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("percentile of an empty list")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"p must be in [0, 100], got {p}")
    idx = int(math.floor(p / 100.0 * (vals.size - 1)))
    return float(np.sort(vals, kind="stable")[idx])


def similarity_map(fmap: FeatureMap, vector) -> np.ndarray:
    """Cosine similarity of every patch to a reference vector, as (n, n).

    Shared by enrollment (threshold statistics) and query matching so both
    see bit-identical values for identical inputs.
    """
    v = np.asarray(vector, dtype=np.float64).ravel()
    if v.size != fmap.dim:
        raise ValueError(f"vector dim {v.size} does not match feature dim {fmap.dim}")
    vn = float(np.linalg.norm(v))
    if vn == 0.0:
        raise DegenerateInputError("zero-norm reference vector")
    flat = fmap.flat
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateInputError("feature map contains a zero-norm patch vector")
    sims = (flat @ v) / (norms * vn)
    n = fmap.n_patches
    return np.clip(sims, -1.0, 1.0).reshape(n, n)


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def connected_components(mask: PatchSet) -> list[PatchSet]:
    """Partition a mask into maximal 4-connected components.

    Components are ordered by (min row, min col) over their members, with
    the first row-major member as a deterministic tie-break. The outputs
    are pairwise disjoint and their union is the input.
    """
    if mask.is_empty:
        return []
    labels, count = ndimage.label(mask.array, structure=_FOUR_CONNECTED)
    n = mask.n_patches
    keyed = []
    for lab in range(1, count + 1):
        comp = labels == lab
        rows, cols = np.nonzero(comp)
        # np.nonzero is row-major, so rows[0], cols[0] is the first member
        key = (int(rows[0]), int(cols.min()), int(rows[0]) * n + int(cols[0]))
        keyed.append((key, PatchSet.from_array(comp)))
    keyed.sort(key=lambda kv: kv[0])
    return [ps for _, ps in keyed]


def bbox_of(mask: PatchSet) -> BBox:
    """Smallest bounding box containing every member of a non-empty mask."""
    if mask.is_empty:
        raise ValueError("bbox of an empty patch set")
    rows, cols = np.nonzero(mask.array)
    return BBox(
        x_min=int(cols.min()),
        y_min=int(rows.min()),
        x_max=int(cols.max()),
        y_max=int(rows.max()),
    )


def rect_patches(bbox: BBox, n_patches: int) -> PatchSet:
    """All patches covered by a bounding box, as a PatchSet."""
    if bbox.x_max >= n_patches or bbox.y_max >= n_patches:
        raise ValueError(f"bbox {bbox.as_tuple()} exceeds {n_patches}x{n_patches} grid")
    mask = np.zeros((n_patches, n_patches), dtype=bool)
    mask[bbox.y_min : bbox.y_max + 1, bbox.x_min : bbox.x_max + 1] = True
    return PatchSet.from_array(mask)
