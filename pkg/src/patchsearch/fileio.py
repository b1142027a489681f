"""File formats: binary feature maps, dataset manifests, enrolled-model
stores, search results and metric reports.

Feature maps are binary; everything else is structured text. Results,
stores and reports are line-delimited JSON with a versioned header line
so they stay diff-able. All writers go through a temp-file-then-rename
step, so partially written artifacts never replace good ones.

FeatureFile layout (little-endian):

    bytes 0..6   magic "PFMAP\\x00\\x01"
    byte  7      flags: 0x00 plain, 0x01 a class-token block follows the payload
    bytes 8..11  n_patches, uint32
    bytes 12..15 dim, uint32
    then         n_patches**2 * dim float32 values, row-major (row, col, channel)
    then         dim float32 class-token values, only when flags & 0x01

The engine ignores the optional class-token block; it exists for feature
extractors that want to keep the image-level token next to the patch grid.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BBox, FeatureMap, PatchSet, rect_patches
from .enrollment import ClassModel, SupportPrompt
from .evaluation import MetricsReport
from .search import SearchResult

__all__ = [
    "BadMagicError",
    "DataError",
    "DatasetManifest",
    "FeatureFileError",
    "InvalidHeaderError",
    "InvalidPayloadError",
    "ManifestError",
    "QueryRecord",
    "QueryTruth",
    "SupportRecord",
    "TruncatedPayloadError",
    "load_feature_file",
    "load_manifest",
    "load_report",
    "load_results",
    "load_store",
    "mask_from_b64",
    "mask_to_b64",
    "save_manifest",
    "save_report",
    "save_results",
    "save_store",
    "write_feature_file",
]

MAGIC_PREFIX = b"PFMAP\x00\x01"
FLAG_CLASS_TOKEN = 0x01
HEADER_SIZE = 16

MANIFEST_VERSION = 1
STORE_VERSION = 1
RESULTS_VERSION = 1
REPORT_VERSION = 1


class DataError(ValueError):
    """Base class for every data/validation failure (CLI exit code 2)."""


class FeatureFileError(DataError):
    pass


class BadMagicError(FeatureFileError):
    pass


class InvalidHeaderError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class InvalidPayloadError(FeatureFileError):
    pass


class ManifestError(DataError):
    pass


def _atomic_write_bytes(path: Path, data: bytes) -> None:
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


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# feature files


def write_feature_file(path, fmap: FeatureMap, class_token=None) -> None:
    """Serialize a feature map (optionally with a trailing class token)."""
    flags = 0
    parts = [
        MAGIC_PREFIX,
        bytes([flags]),
        struct.pack("<II", fmap.n_patches, fmap.dim),
        fmap.data.astype("<f4").tobytes(),
    ]
    if class_token is not None:
        token = np.asarray(class_token, dtype="<f4").ravel()
        if token.size != fmap.dim:
            raise ValueError("class token dim does not match the feature dim")
        parts[1] = bytes([FLAG_CLASS_TOKEN])
        parts.append(token.tobytes())
    _atomic_write_bytes(Path(path), b"".join(parts))


def load_feature_file(path) -> FeatureMap:
    """Read and validate a feature file; the class-token block is ignored."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    if data[:7] != MAGIC_PREFIX:
        raise BadMagicError(f"{path}: bad magic {data[:8]!r}")
    flags = data[7]
    if flags not in (0, FLAG_CLASS_TOKEN):
        raise BadMagicError(f"{path}: unknown flags byte {flags:#04x}")
    n_patches, dim = struct.unpack_from("<II", data, 8)
    if n_patches < 1:
        raise InvalidHeaderError(f"{path}: header field n_patches must be >= 1, got {n_patches}")
    if dim < 1:
        raise InvalidHeaderError(f"{path}: header field dim must be >= 1, got {dim}")
    payload = n_patches * n_patches * dim * 4
    extra = dim * 4 if flags & FLAG_CLASS_TOKEN else 0
    expected = HEADER_SIZE + payload + extra
    if len(data) < expected:
        raise TruncatedPayloadError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(data)}"
        )
    if len(data) > expected:
        raise InvalidPayloadError(
            f"{path}: {len(data) - expected} trailing bytes beyond the declared payload"
        )
    arr = np.frombuffer(data, dtype="<f4", count=n_patches * n_patches * dim, offset=HEADER_SIZE)
    arr = arr.reshape(n_patches, n_patches, dim)
    if not np.isfinite(arr).all():
        raise InvalidPayloadError(f"{path}: payload contains NaN or Inf values")
    return FeatureMap(arr)


# ---------------------------------------------------------------------------
# bitmask helpers


def mask_to_b64(mask: PatchSet) -> str:
    return base64.b64encode(mask.to_bitmask()).decode("ascii")


def mask_from_b64(n_patches: int, encoded: str) -> PatchSet:
    try:
        raw = base64.b64decode(encoded.encode("ascii"), validate=True)
    except Exception as exc:
        raise DataError(f"invalid base64 bitmask: {exc}") from exc
    try:
        return PatchSet.from_bitmask(n_patches, raw)
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _bbox_from_json(value) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise ManifestError(f"bbox must be [x_min, y_min, x_max, y_max], got {value!r}")
    try:
        return BBox(*[int(v) for v in value])
    except ValueError as exc:
        raise ManifestError(str(exc)) from exc


def _region_from_json(spec, n_patches: int, where: str) -> PatchSet:
    """Parse a {'kind': 'bbox'|'mask', ...} region into a PatchSet."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ManifestError(f"{where}: region must be an object with a 'kind' field")
    if spec["kind"] == "bbox":
        bbox = _bbox_from_json(spec.get("bbox"))
        if bbox.x_max >= n_patches or bbox.y_max >= n_patches:
            raise ManifestError(f"{where}: bbox {bbox.as_tuple()} exceeds the grid")
        return rect_patches(bbox, n_patches)
    if spec["kind"] == "mask":
        if "mask" not in spec:
            raise ManifestError(f"{where}: mask region missing 'mask' field")
        return mask_from_b64(n_patches, spec["mask"])
    raise ManifestError(f"{where}: unknown region kind {spec['kind']!r}")


# ---------------------------------------------------------------------------
# dataset manifest


@dataclass(frozen=True)
class SupportRecord:
    class_index: int
    feature_file: Path
    prompt: SupportPrompt


@dataclass(frozen=True)
class QueryTruth:
    class_index: int
    gt_mask: PatchSet


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    feature_file: Path
    truths: tuple[QueryTruth, ...]


@dataclass
class DatasetManifest:
    n_patches: int
    dim: int
    classes: dict[int, str]
    supports: list[SupportRecord] = field(default_factory=list)
    queries: list[QueryRecord] = field(default_factory=list)


def save_manifest(raw: dict, path) -> None:
    """Write a manifest dict as indented JSON (builders produce the dict)."""
    _atomic_write_text(Path(path), json.dumps(raw, indent=2) + "\n")


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a dataset manifest.

    Checks the schema version, that every referenced class exists, that
    there is exactly one support per class, that query ids are unique and
    that every referenced feature file exists.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    try:
        return _parse_manifest(raw, path)
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: malformed manifest field: {exc!r}") from exc


def _parse_manifest(raw: dict, path: Path) -> DatasetManifest:
    if raw.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"{path}: unsupported manifest version {raw.get('version')!r}, "
            f"expected {MANIFEST_VERSION}"
        )
    n_patches = int(raw.get("n_patches", 0))
    dim = int(raw.get("dim", 0))
    if n_patches < 1 or dim < 1:
        raise ManifestError(f"{path}: n_patches and dim must be >= 1")

    classes: dict[int, str] = {}
    for entry in raw.get("classes", []):
        idx = int(entry["class_index"])
        if idx in classes:
            raise ManifestError(f"{path}: duplicate class_index {idx}")
        classes[idx] = str(entry["label"])
    if not classes:
        raise ManifestError(f"{path}: manifest declares no classes")

    root = path.parent
    supports = []
    seen_support: set[int] = set()
    for entry in raw.get("supports", []):
        idx = int(entry["class_index"])
        if idx not in classes:
            raise ManifestError(f"{path}: support references unknown class {idx}")
        if idx in seen_support:
            raise ManifestError(f"{path}: duplicate support for class {idx} (one-shot)")
        seen_support.add(idx)
        feature_file = root / entry["feature_file"]
        if not feature_file.is_file():
            raise ManifestError(f"{path}: missing feature file {feature_file}")
        spec = entry.get("prompt")
        if not isinstance(spec, dict) or spec.get("kind") not in ("bbox", "mask"):
            raise ManifestError(f"{path}: support for class {idx} has no valid prompt")
        if spec["kind"] == "bbox":
            bbox = _bbox_from_json(spec.get("bbox"))
            if bbox.x_max >= n_patches or bbox.y_max >= n_patches:
                raise ManifestError(f"{path}: support bbox {bbox.as_tuple()} exceeds the grid")
            prompt = SupportPrompt(kind="bbox", label=classes[idx], class_index=idx, bbox=bbox)
        else:
            mask = mask_from_b64(n_patches, spec.get("mask", ""))
            prompt = SupportPrompt(kind="mask", label=classes[idx], class_index=idx, mask=mask)
        supports.append(SupportRecord(class_index=idx, feature_file=feature_file, prompt=prompt))
    missing = set(classes) - seen_support
    if missing:
        raise ManifestError(f"{path}: classes without a support: {sorted(missing)}")

    queries = []
    seen_ids: set[str] = set()
    for entry in raw.get("queries", []):
        query_id = str(entry["query_id"])
        if query_id in seen_ids:
            raise ManifestError(f"{path}: duplicate query_id {query_id!r}")
        seen_ids.add(query_id)
        feature_file = root / entry["feature_file"]
        if not feature_file.is_file():
            raise ManifestError(f"{path}: missing feature file {feature_file}")
        truths = []
        for t in entry.get("truths", []):
            idx = int(t["class_index"])
            if idx not in classes:
                raise ManifestError(f"{path}: query {query_id!r} references unknown class {idx}")
            gt = _region_from_json(t.get("gt"), n_patches, f"query {query_id!r}")
            truths.append(QueryTruth(class_index=idx, gt_mask=gt))
        queries.append(
            QueryRecord(query_id=query_id, feature_file=feature_file, truths=tuple(truths))
        )
    return DatasetManifest(
        n_patches=n_patches, dim=dim, classes=classes, supports=supports, queries=queries
    )


# ---------------------------------------------------------------------------
# enrolled store


def save_store(path, models: list[ClassModel], meta: dict) -> None:
    """Persist enrolled class models as JSONL; round-trips bit-exactly."""
    if not models:
        raise DataError("refusing to save an empty model store")
    n_patches = models[0].support_seg.n_patches
    dim = models[0].prototype.size
    lines = [
        json.dumps(
            {
                "type": "header",
                "schema": "patchsearch-store",
                "version": STORE_VERSION,
                "n_patches": n_patches,
                "dim": int(dim),
                "config": meta,
            }
        )
    ]
    for model in sorted(models, key=lambda m: m.class_index):
        lines.append(
            json.dumps(
                {
                    "type": "class_model",
                    "class_index": model.class_index,
                    "label": model.label,
                    "prototype": [float(v) for v in model.prototype],
                    "threshold": float(model.threshold),
                    "support_seg": mask_to_b64(model.support_seg),
                }
            )
        )
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_store(path) -> tuple[list[ClassModel], dict]:
    """Load enrolled models; returns (models, header) with header carrying
    n_patches/dim/config."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty store file")
    try:
        header = json.loads(lines[0])
        if header.get("schema") != "patchsearch-store" or header.get("version") != STORE_VERSION:
            raise DataError(f"{path}: not a version-{STORE_VERSION} patchsearch store")
        n_patches = int(header["n_patches"])
        dim = int(header["dim"])
        models = []
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type") != "class_model":
                raise DataError(f"{path}: unexpected record type {rec.get('type')!r}")
            prototype = np.asarray(rec["prototype"], dtype=np.float64)
            if prototype.size != dim:
                raise DataError(
                    f"{path}: class {rec['class_index']} prototype dim {prototype.size} != {dim}"
                )
            models.append(
                ClassModel(
                    class_index=int(rec["class_index"]),
                    label=str(rec["label"]),
                    prototype=prototype,
                    threshold=float(rec["threshold"]),
                    support_seg=mask_from_b64(n_patches, rec["support_seg"]),
                )
            )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed store record: {exc!r}") from exc
    if not models:
        raise DataError(f"{path}: store holds no class models")
    return models, header


# ---------------------------------------------------------------------------
# search results


def _bbox_json(bbox: BBox | None):
    return None if bbox is None else list(bbox.as_tuple())


def _result_json(result: SearchResult) -> dict:
    final = result.refined_mask if result.refined_mask is not None else result.raw_mask
    if result.accepted is False:
        oloc = None
    else:
        oloc = {"mask": mask_to_b64(final), "bbox": _bbox_json(result.bbox)}
    return {
        "class_index": result.class_index,
        "score": float(result.score),
        "raw_mask": mask_to_b64(result.raw_mask),
        "refined_mask": None
        if result.refined_mask is None
        else mask_to_b64(result.refined_mask),
        "bbox": _bbox_json(result.bbox),
        "accepted": result.accepted,
        "oloc": oloc,
        "candidates": [
            {"mask": mask_to_b64(mask), "score": float(score)}
            for mask, score in result.candidates
        ],
    }


def save_results(
    path,
    rows: list[tuple[str, list[SearchResult]]],
    *,
    n_patches: int,
    dim: int,
    classes: dict[int, str],
    config: dict,
) -> None:
    """Write per-query search results as JSONL (header line first).

    Every query line carries exactly one entry per enrolled class, in
    ascending class order, with an explicit null location for rejected
    classes.
    """
    lines = [
        json.dumps(
            {
                "type": "header",
                "schema": "patchsearch-results",
                "version": RESULTS_VERSION,
                "n_patches": n_patches,
                "dim": dim,
                "classes": [
                    {"class_index": idx, "label": classes[idx]} for idx in sorted(classes)
                ],
                "config": config,
            }
        )
    ]
    for query_id, results in rows:
        ordered = sorted(results, key=lambda r: r.class_index)
        lines.append(
            json.dumps(
                {
                    "type": "result",
                    "query_id": query_id,
                    "results": [_result_json(r) for r in ordered],
                }
            )
        )
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def _result_from_json(rec: dict, n_patches: int) -> SearchResult:
    return SearchResult(
        class_index=int(rec["class_index"]),
        score=float(rec["score"]),
        raw_mask=mask_from_b64(n_patches, rec["raw_mask"]),
        refined_mask=None
        if rec.get("refined_mask") is None
        else mask_from_b64(n_patches, rec["refined_mask"]),
        bbox=None if rec.get("bbox") is None else _bbox_from_json(rec["bbox"]),
        accepted=rec.get("accepted"),
        candidates=[
            (mask_from_b64(n_patches, c["mask"]), float(c["score"]))
            for c in rec.get("candidates", [])
        ],
    )


def load_results(path) -> tuple[dict, list[tuple[str, list[SearchResult]]]]:
    """Load a results document; returns (header, [(query_id, results)])."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"{path}: empty results file")
    try:
        header = json.loads(lines[0])
        if header.get("schema") != "patchsearch-results" or header.get("version") != RESULTS_VERSION:
            raise DataError(f"{path}: not a version-{RESULTS_VERSION} patchsearch results file")
        n_patches = int(header["n_patches"])
        rows = []
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("type") != "result":
                raise DataError(f"{path}: unexpected record type {rec.get('type')!r}")
            rows.append(
                (
                    str(rec["query_id"]),
                    [_result_from_json(r, n_patches) for r in rec["results"]],
                )
            )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed results record: {exc!r}") from exc
    return header, rows


# ---------------------------------------------------------------------------
# metric reports


def save_report(path, report: MetricsReport, *, mode: str, classes_evaluated: list[int]) -> None:
    lines = [
        json.dumps(
            {
                "type": "header",
                "schema": "patchsearch-report",
                "version": REPORT_VERSION,
                "mode": mode,
            }
        ),
        json.dumps(
            {
                "type": "metrics",
                "miou": float(report.miou),
                "acc": float(report.acc),
                "cprec": float(report.cprec),
                "per_class_ap": [float(v) for v in report.per_class_ap],
                "classes_evaluated": classes_evaluated,
                "n_records": report.n_records,
                "timing": report.timing,
            }
        ),
    ]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_report(path) -> dict:
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise DataError(f"{path}: report file is incomplete")
    header = json.loads(lines[0])
    if header.get("schema") != "patchsearch-report" or header.get("version") != REPORT_VERSION:
        raise DataError(f"{path}: not a version-{REPORT_VERSION} patchsearch report")
    metrics = json.loads(lines[1])
    metrics["mode"] = header.get("mode")
    return metrics
