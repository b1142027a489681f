import hashlib
from pathlib import Path

import numpy as np
import pytest

from patchsearch import load_feature_file, load_manifest
from patchsearch.synth import SynthSpec, SynthSpecError, generate_dataset


def dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


class TestSynthSpec:
    def test_validation(self):
        with pytest.raises(SynthSpecError):
            SynthSpec(n_classes=0)
        with pytest.raises(SynthSpecError):
            SynthSpec(n_classes=2, dim=2)
        with pytest.raises(SynthSpecError):
            SynthSpec(n_classes=2, objects_per_scene=3)
        with pytest.raises(SynthSpecError):
            SynthSpec(n_classes=2, noise_sigma=-0.1)

    def test_from_json_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "spec.json"
        path.write_text('{"n_classes": 2, "bogus": 1}')
        with pytest.raises(SynthSpecError, match="unknown spec fields"):
            SynthSpec.from_json(path)

    def test_infeasible_placement(self, tmp_path):
        # 40 objects with sides in [2, 4] average 9 patches each, which can
        # never fit disjointly on a 256-patch grid -> must raise, not spin
        spec = SynthSpec(n_classes=40, n_patches=16, dim=64, scenes=1, objects_per_scene=40)
        with pytest.raises(SynthSpecError, match="could not place"):
            generate_dataset(spec, tmp_path / "doomed")


class TestGenerateDataset:
    def test_same_seed_bit_identical(self, tmp_path):
        spec = SynthSpec(n_classes=3, n_patches=16, dim=8, scenes=4, seed=5)
        generate_dataset(spec, tmp_path / "a")
        generate_dataset(spec, tmp_path / "b")
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        base = dict(n_classes=3, n_patches=16, dim=8, scenes=4)
        generate_dataset(SynthSpec(seed=1, **base), tmp_path / "a")
        generate_dataset(SynthSpec(seed=2, **base), tmp_path / "b")
        assert dir_digest(tmp_path / "a") != dir_digest(tmp_path / "b")

    def test_manifest_is_valid_and_balanced(self, tmp_path):
        spec = SynthSpec(n_classes=4, n_patches=16, dim=8, scenes=8, objects_per_scene=2)
        manifest = load_manifest(generate_dataset(spec, tmp_path))
        assert len(manifest.supports) == 4
        assert len(manifest.queries) == 8
        positives = {c: 0 for c in manifest.classes}
        for query in manifest.queries:
            assert len(query.truths) == 2
            for truth in query.truths:
                positives[truth.class_index] += 1
        assert all(count == 4 for count in positives.values())

    def test_noiseless_scene_features_are_exact_anchors(self, tmp_path):
        spec = SynthSpec(n_classes=3, n_patches=16, dim=8, scenes=2, noise_sigma=0.0)
        manifest = load_manifest(generate_dataset(spec, tmp_path))
        query = manifest.queries[0]
        fmap = load_feature_file(query.feature_file)
        # every patch is exactly one of the orthogonal basis anchors
        norms = np.linalg.norm(fmap.data, axis=2)
        assert np.allclose(norms, 1.0)
        for truth in query.truths:
            block = fmap.data[truth.gt_mask.array]
            assert np.all(block == block[0])
            assert block[0, truth.class_index] == 1.0

    def test_small_noise_keeps_prototype_margins(self, tmp_path):
        # >99% of planted patches must be closer (cosine) to their own anchor
        # than to any other class anchor
        spec = SynthSpec(n_classes=4, n_patches=16, dim=16, scenes=6, noise_sigma=0.05, seed=3)
        manifest = load_manifest(generate_dataset(spec, tmp_path))
        anchors = np.eye(16)[:4]
        good = 0
        total = 0
        for query in manifest.queries:
            fmap = load_feature_file(query.feature_file)
            for truth in query.truths:
                block = fmap.data[truth.gt_mask.array]
                sims = (block / np.linalg.norm(block, axis=1, keepdims=True)) @ anchors.T
                own = sims[:, truth.class_index]
                other = np.max(np.delete(sims, truth.class_index, axis=1), axis=1)
                good += int((own > other).sum())
                total += len(block)
        assert good / total > 0.99
