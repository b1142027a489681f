import logging

import numpy as np
import pytest

from patchsearch import (
    BBox,
    FeatureMap,
    PatchSet,
    SupportPrompt,
    adaptive_threshold,
    bbox_patches,
    build_prototype,
    enroll,
    seg_from_bbox,
)

from grids import planted_fmap, uniform_fmap


def border_oracle(inside: PatchSet, n: int) -> frozenset:
    """Brute-force 8-adjacency scan: outside patches touching the inside."""
    out = set()
    for r in range(n):
        for c in range(n):
            if (r, c) in inside:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if (dr or dc) and (r + dr, c + dc) in inside:
                        out.add((r, c))
    return frozenset(out)


ANCHORS = np.eye(8)


class TestBBoxPatches:
    def test_full_grid_has_empty_border(self):
        inside, border = bbox_patches(BBox(0, 0, 3, 3), 4)
        assert len(inside) == 16
        assert border.is_empty

    def test_unit_box(self):
        inside, border = bbox_patches(BBox(1, 1, 1, 1), 4)
        assert inside.members == frozenset({(1, 1)})
        assert border.members == frozenset(
            {(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)}
        )

    def test_matches_adjacency_oracle(self, rng):
        for _ in range(30):
            n = 9
            x0, y0 = rng.integers(0, n, size=2)
            x1 = rng.integers(x0, n)
            y1 = rng.integers(y0, n)
            inside, border = bbox_patches(BBox(int(x0), int(y0), int(x1), int(y1)), n)
            assert border.members == border_oracle(inside, n)
            assert (inside & border).is_empty

    def test_out_of_grid_rejected(self):
        with pytest.raises(ValueError):
            bbox_patches(BBox(0, 0, 4, 4), 4)


class TestSegFromBbox:
    def test_perfectly_separable(self):
        fm = planted_fmap(8, ANCHORS, [(0, 2, 2, 3, 3)], background=1)
        seg = seg_from_bbox(fm, BBox(2, 2, 4, 4), k_s=5, seed=0)
        assert seg.members == frozenset((r, c) for r in (2, 3, 4) for c in (2, 3, 4))

    def test_uniform_features_fall_back_to_box(self, caplog):
        fm = uniform_fmap(8, 4)
        with caplog.at_level(logging.WARNING):
            seg = seg_from_bbox(fm, BBox(1, 1, 3, 3), k_s=5, seed=0)
        inside, _ = bbox_patches(BBox(1, 1, 3, 3), 8)
        assert seg == inside
        assert any("falling back" in r.message for r in caplog.records)

    def test_planted_two_feature_box(self):
        # object occupies top of the box, background fills the rest and the
        # border ring; the background cluster touches the border and is dropped
        fm = planted_fmap(10, ANCHORS, [(0, 2, 2, 2, 4)], background=1)
        seg = seg_from_bbox(fm, BBox(2, 2, 5, 5), k_s=5, seed=1)
        expected = frozenset((r, c) for r in (2, 3) for c in (2, 3, 4, 5))
        assert seg.members == expected

    def test_result_within_box(self, rng):
        for seed in range(5):
            fm = FeatureMap(rng.normal(size=(8, 8, 4)))
            box = BBox(1, 2, 5, 6)
            seg = seg_from_bbox(fm, box, k_s=3, seed=seed)
            inside, _ = bbox_patches(box, 8)
            assert (seg - inside).is_empty
            assert not seg.is_empty

    def test_small_k_rejected(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 4, 3)))
        with pytest.raises(ValueError):
            seg_from_bbox(fm, BBox(0, 0, 1, 1), k_s=1)


class TestBuildPrototype:
    def test_singleton(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 4, 3)))
        seg = PatchSet(4, [(2, 1)])
        assert np.array_equal(build_prototype(fm, seg), fm.data[2, 1])

    def test_two_patch_mean(self):
        data = np.zeros((2, 2, 2))
        data[0, 0] = [1, 0]
        data[0, 1] = [0, 1]
        proto = build_prototype(FeatureMap(data), PatchSet(2, [(0, 0), (0, 1)]))
        assert np.array_equal(proto, [0.5, 0.5])

    def test_matches_naive_sum(self, rng):
        fm = FeatureMap(rng.normal(size=(6, 6, 5)))
        members = [(0, 3), (1, 1), (2, 5), (4, 0), (5, 5)]
        proto = build_prototype(fm, PatchSet(6, members))
        naive = sum(fm.data[r, c] for r, c in members) / len(members)
        assert np.allclose(proto, naive, atol=1e-6)

    def test_empty_raises(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 3, 2)))
        with pytest.raises(ValueError):
            build_prototype(fm, PatchSet(3))


def fmap_with_sims(psims: list[float], nsims: list[float], n: int) -> tuple:
    """Grid whose first len(psims) patches have the given similarity to (1, 0)
    and the rest the given nsims (cycled)."""
    total = n * n
    assert len(psims) + len(nsims) <= total
    values = list(psims) + list(nsims)
    values += [nsims[-1]] * (total - len(values))
    data = np.zeros((total, 2))
    for i, s in enumerate(values):
        data[i] = [s, np.sqrt(max(0.0, 1.0 - s * s))]
    fm = FeatureMap(data.reshape(n, n, 2))
    seg = PatchSet.from_array(
        (np.arange(total) < len(psims)).reshape(n, n)
    )
    return fm, seg


class TestAdaptiveThreshold:
    def test_separated_bands(self):
        fm, seg = fmap_with_sims([0.9] * 10, [0.1] * 15, 5)
        tr = adaptive_threshold(fm, seg, np.array([1.0, 0.0]))
        assert tr == pytest.approx(0.9, abs=1e-12)

    def test_constant_positives(self):
        fm, seg = fmap_with_sims([0.7] * 12, [0.0] * 4, 4)
        tr = adaptive_threshold(fm, seg, np.array([1.0, 0.0]))
        assert tr == pytest.approx(0.7, abs=1e-12)

    def test_positive_outlier_dropped(self):
        # 21 positives: one 0.2 outlier below twenty 0.95 values; the 5th
        # percentile (index floor(0.05 * 20) = 1) skips the outlier
        fm, seg = fmap_with_sims([0.2] + [0.95] * 20, [0.0] * 60, 9)
        tr = adaptive_threshold(fm, seg, np.array([1.0, 0.0]))
        assert tr == pytest.approx(0.95, abs=1e-12)

    def test_negative_band_can_dominate(self):
        # negatives more similar than the positive floor: ntr wins the max
        fm, seg = fmap_with_sims([0.5] * 8, [0.8] * 8, 4)
        tr = adaptive_threshold(fm, seg, np.array([1.0, 0.0]))
        assert tr == pytest.approx(0.8, abs=1e-12)

    def test_whole_grid_seg_returns_ptr(self):
        fm, _ = fmap_with_sims([0.9] * 8, [0.9] * 8, 4)
        tr = adaptive_threshold(fm, PatchSet.full(4), np.array([1.0, 0.0]))
        assert tr == pytest.approx(0.9, abs=1e-12)

    def test_empty_seg_raises(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 3, 2)))
        with pytest.raises(ValueError):
            adaptive_threshold(fm, PatchSet(3), np.array([1.0, 0.0]))


class TestEnroll:
    def test_mask_prompt_uniform_features(self):
        fm = planted_fmap(6, ANCHORS, [(0, 1, 1, 2, 2)], background=1)
        mask = PatchSet(6, [(1, 1), (1, 2), (2, 1), (2, 2)])
        prompt = SupportPrompt(kind="mask", label="cup", class_index=0, mask=mask)
        model = enroll(fm, prompt)
        assert np.array_equal(model.prototype, ANCHORS[0])
        assert model.support_seg == mask
        assert model.threshold == pytest.approx(1.0, abs=1e-12)

    def test_bbox_prompt_planted_scene(self):
        fm = planted_fmap(8, ANCHORS, [(2, 3, 1, 4, 5)], background=1, sigma=0.01, seed=3)
        prompt = SupportPrompt(
            kind="bbox", label="toy", class_index=2, bbox=BBox(1, 3, 5, 6)
        )
        model = enroll(fm, prompt, seed=5)
        planted = [(r, c) for r in range(3, 7) for c in range(1, 6)]
        expected = np.mean([fm.data[r, c] for r, c in model.support_seg.members], axis=0)
        assert model.support_seg.members == frozenset(planted)
        assert np.allclose(model.prototype, expected, atol=1e-9)

    def test_deterministic(self, rng):
        fm = FeatureMap(rng.normal(size=(8, 8, 4)))
        prompt = SupportPrompt(kind="bbox", label="x", class_index=1, bbox=BBox(2, 2, 5, 5))
        a = enroll(fm, prompt, seed=11)
        b = enroll(fm, prompt, seed=11)
        assert np.array_equal(a.prototype, b.prototype)
        assert a.threshold == b.threshold
        assert a.support_seg == b.support_seg

    def test_positive_percentile_construction(self):
        from patchsearch import percentile, similarity_map

        fm = planted_fmap(12, ANCHORS, [(0, 2, 2, 6, 6)], background=1, sigma=0.05, seed=7)
        prompt = SupportPrompt(kind="bbox", label="x", class_index=0, bbox=BBox(2, 2, 7, 7))
        model = enroll(fm, prompt)
        sims = similarity_map(fm, model.prototype)
        psim = sims[model.support_seg.array]
        ptr = percentile(psim, 5)
        frac = float((psim >= ptr).mean())
        assert frac >= 0.94

    def test_prompt_validation(self):
        with pytest.raises(ValueError):
            SupportPrompt(kind="bbox", label="x", class_index=0)  # missing bbox
        with pytest.raises(ValueError):
            SupportPrompt(
                kind="mask",
                label="x",
                class_index=0,
                bbox=BBox(0, 0, 1, 1),
                mask=PatchSet(2, [(0, 0)]),
            )
        with pytest.raises(ValueError):
            SupportPrompt(kind="point", label="x", class_index=0)
