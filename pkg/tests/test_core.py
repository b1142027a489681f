import math

import numpy as np
import pytest

from patchsearch import (
    BBox,
    DegenerateInputError,
    FeatureMap,
    PatchSet,
    bbox_of,
    connected_components,
    cosine_similarity,
    percentile,
    rect_patches,
    similarity_map,
)

from grids import flood_fill_components, random_patchset


class TestCosineSimilarity:
    def test_identical(self):
        assert cosine_similarity((1, 0), (1, 0)) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity((1, 0), (0, 1)) == 0.0

    def test_hand_computed(self):
        assert cosine_similarity((1, 1), (1, 0)) == pytest.approx(1 / math.sqrt(2), abs=1e-9)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity((0, 0), (1, 0))
        with pytest.raises(DegenerateInputError):
            cosine_similarity((1, 0), (0, 0))

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            cosine_similarity((1, 0), (1, 0, 0))

    def test_symmetry_and_scale_invariance(self, rng):
        for _ in range(200):
            u = rng.normal(size=5)
            v = rng.normal(size=5)
            a, b = rng.uniform(0.1, 10, size=2)
            assert cosine_similarity(u, v) == pytest.approx(cosine_similarity(v, u), abs=1e-12)
            assert cosine_similarity(a * u, b * v) == pytest.approx(
                cosine_similarity(u, v), abs=1e-6
            )

    def test_range(self, rng):
        for _ in range(100):
            s = cosine_similarity(rng.normal(size=8), rng.normal(size=8))
            assert -1.0 <= s <= 1.0


class TestPercentile:
    def test_minimum(self):
        assert percentile([3, 1, 2], 0) == 1

    def test_maximum(self):
        assert percentile([3, 1, 2], 100) == 3

    def test_lower_nearest_rank(self):
        # index floor(0.95 * 3) = 2 of the ascending sort
        assert percentile([10, 20, 30, 40], 95) == 30

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            percentile([], 50)

    def test_out_of_range_p(self):
        with pytest.raises(ValueError):
            percentile([1.0], 101)

    def test_monotone_in_p(self, rng):
        values = rng.normal(size=17)
        prev = -np.inf
        for p in np.linspace(0, 100, 60):
            cur = percentile(values, p)
            assert cur >= prev
            prev = cur

    def test_returns_an_element(self, rng):
        values = list(rng.normal(size=9))
        for p in (0, 13, 50, 77, 100):
            assert percentile(values, p) in values


class TestPatchSet:
    def test_bounds_checked(self):
        with pytest.raises(ValueError):
            PatchSet(4, [(4, 0)])
        with pytest.raises(ValueError):
            PatchSet(4, [(0, -1)])

    def test_set_algebra_exact(self, rng):
        for _ in range(50):
            a = random_patchset(rng, 9)
            b = random_patchset(rng, 9)
            assert (a | b).members == a.members | b.members
            assert (a & b).members == a.members & b.members
            assert (a - b).members == a.members - b.members
        assert (a & PatchSet(9)).is_empty

    def test_bitmask_round_trip(self, rng):
        for n in (1, 3, 8, 16, 32):
            ps = random_patchset(rng, n, density=0.4)
            raw = ps.to_bitmask()
            assert len(raw) == (n * n + 7) // 8
            assert PatchSet.from_bitmask(n, raw) == ps

    def test_bitmask_is_msb_first_row_major(self):
        ps = PatchSet(3, [(0, 0), (0, 2), (2, 2)])
        # bits: 101 000 001 -> bytes 10100000 1(pad)
        assert ps.to_bitmask() == bytes([0b10100000, 0b10000000])

    def test_bad_padding_rejected(self):
        with pytest.raises(ValueError):
            PatchSet.from_bitmask(3, bytes([0b10100000, 0b01000000]))

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            PatchSet(3) | PatchSet(4)

    def test_iteration_row_major(self):
        ps = PatchSet(4, [(2, 1), (0, 3), (2, 0)])
        assert list(ps) == [(0, 3), (2, 0), (2, 1)]


class TestFeatureMap:
    def test_validates_shape(self):
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((3, 4, 2)))
        with pytest.raises(ValueError):
            FeatureMap(np.zeros((3, 3)))

    def test_rejects_nan_inf(self):
        data = np.zeros((2, 2, 3))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(data)
        data[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            FeatureMap(data)

    def test_flat_indexing(self, rng):
        data = rng.normal(size=(5, 5, 3))
        fm = FeatureMap(data)
        assert np.array_equal(fm.flat[2 * 5 + 3], data[2, 3])

    def test_data_is_frozen(self, rng):
        fm = FeatureMap(rng.normal(size=(3, 3, 2)))
        with pytest.raises(ValueError):
            fm.data[0, 0, 0] = 1.0


class TestSimilarityMap:
    def test_matches_scalar_cosine(self, rng):
        fm = FeatureMap(rng.normal(size=(4, 4, 6)))
        v = rng.normal(size=6)
        sims = similarity_map(fm, v)
        for i in range(4):
            for j in range(4):
                assert sims[i, j] == pytest.approx(
                    cosine_similarity(fm.data[i, j], v), abs=1e-12
                )

    def test_zero_norm_patch_raises(self):
        data = np.ones((2, 2, 3))
        data[1, 1] = 0.0
        with pytest.raises(DegenerateInputError):
            similarity_map(FeatureMap(data), np.ones(3))


class TestConnectedComponents:
    def test_two_islands(self):
        mask = PatchSet(8, [(0, 0), (0, 1), (5, 5)])
        comps = connected_components(mask)
        assert [c.members for c in comps] == [
            frozenset({(0, 0), (0, 1)}),
            frozenset({(5, 5)}),
        ]

    def test_empty(self):
        assert connected_components(PatchSet(4)) == []

    def test_diagonal_is_not_connected(self):
        comps = connected_components(PatchSet(4, [(0, 0), (1, 1)]))
        assert len(comps) == 2

    def test_matches_flood_fill_oracle(self, rng):
        for _ in range(100):
            mask = random_patchset(rng, 16, density=float(rng.uniform(0.1, 0.7)))
            got = {c.members for c in connected_components(mask)}
            want = set(flood_fill_components(mask))
            assert got == want

    def test_partition_property(self, rng):
        for _ in range(50):
            mask = random_patchset(rng, 12)
            comps = connected_components(mask)
            union = PatchSet(12)
            total = 0
            for c in comps:
                assert (union & c).is_empty  # pairwise disjoint
                union = union | c
                total += len(c)
            assert union == mask
            assert total == len(mask)

    def test_ordering_by_min_row_min_col(self):
        # the L-shape starts at (2, 5) in raster order but reaches column 0,
        # so its (min row, min col) key (2, 0) sorts it before the lone patch
        # at (2, 1) even though the lone patch appears first in raster order
        lshape = [(2, 5), (3, 5), (4, 5), (4, 4), (4, 3), (4, 2), (4, 1), (4, 0)]
        mask = PatchSet(8, lshape + [(2, 1)])
        comps = connected_components(mask)
        assert comps[0].members == frozenset(lshape)
        assert comps[1].members == frozenset({(2, 1)})


class TestBBox:
    def test_single_patch(self):
        assert bbox_of(PatchSet(8, [(2, 3)])).as_tuple() == (3, 2, 3, 2)

    def test_two_corners(self):
        assert bbox_of(PatchSet(8, [(1, 1), (4, 7)])).as_tuple() == (1, 1, 7, 4)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            bbox_of(PatchSet(4))

    def test_matches_exhaustive_scan(self, rng):
        for _ in range(50):
            mask = random_patchset(rng, 10, density=0.2)
            if mask.is_empty:
                continue
            box = bbox_of(mask)
            rows = [r for r, _ in mask.members]
            cols = [c for _, c in mask.members]
            assert box.as_tuple() == (min(cols), min(rows), max(cols), max(rows))
            # shrinking any side excludes at least one member
            assert any(c == box.x_min for _, c in mask.members)
            assert any(c == box.x_max for _, c in mask.members)
            assert any(r == box.y_min for r, _ in mask.members)
            assert any(r == box.y_max for r, _ in mask.members)

    def test_invalid_corners(self):
        with pytest.raises(ValueError):
            BBox(3, 0, 2, 0)
        with pytest.raises(ValueError):
            BBox(-1, 0, 2, 2)

    def test_rect_patches(self):
        ps = rect_patches(BBox(1, 2, 2, 3), 5)
        assert ps.members == frozenset({(2, 1), (2, 2), (3, 1), (3, 2)})
        with pytest.raises(ValueError):
            rect_patches(BBox(0, 0, 5, 5), 5)
