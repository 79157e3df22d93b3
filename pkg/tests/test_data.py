"""Data pipeline tests: grids, stitching, folds, augmentation, synthesis."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slideseg import data


class TestMakeGrid:
    def test_paper_geometry_sixteen_patches(self):
        grid = data.make_grid((1000, 1000), 400, 200)
        rows = sorted({r for r, _ in grid.positions})
        assert rows == [0, 200, 400, 600]
        assert len(grid.positions) == 16

    def test_clamped_final_position(self):
        grid = data.make_grid((900, 900), 400, 200)
        rows = sorted({r for r, _ in grid.positions})
        assert rows == [0, 200, 400, 500]
        assert len(grid.positions) == 16

    def test_exact_fit_single_patch(self):
        grid = data.make_grid((64, 64), 64, 16)
        assert grid.positions == ((0, 0),)

    def test_row_major_order(self):
        grid = data.make_grid((10, 12), 4, 1)
        assert list(grid.positions) == sorted(grid.positions)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError):
            data.make_grid((100, 100), 200, 0)
        with pytest.raises(ValueError):
            data.make_grid((100, 100), 50, 50)
        with pytest.raises(ValueError):
            data.make_grid((100, 100), 50, -1)

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_coverage_sweep(self, hyp):
        patch = hyp.draw(st.integers(2, 48))
        h = hyp.draw(st.integers(patch, 4 * patch))
        w = hyp.draw(st.integers(patch, 4 * patch))
        overlap = hyp.draw(st.integers(0, patch - 1))
        grid = data.make_grid((h, w), patch, overlap)
        cov = np.zeros((h, w), dtype=int)
        for r, c in grid.positions:
            cov[r : r + patch, c : c + patch] += 1
        assert cov.min() >= 1


class TestExtractStitch:
    def test_stitch_of_extract_is_identity(self):
        rng = np.random.default_rng(0)
        m = rng.uniform(size=(50, 70))
        grid = data.make_grid((50, 70), 20, 8)
        rebuilt = data.stitch(data.extract(m, grid), grid)
        assert np.abs(rebuilt - m).max() < 1e-6

    def test_identity_on_binary_mask(self):
        rng = np.random.default_rng(1)
        m = (rng.uniform(size=(30, 30)) > 0.5).astype(float)
        grid = data.make_grid((30, 30), 12, 5)
        rebuilt = data.stitch(data.extract(m, grid), grid)
        np.testing.assert_allclose(rebuilt, m, atol=1e-9)

    def test_constant_patches_give_constant_map(self):
        grid = data.make_grid((20, 20), 8, 3)
        rebuilt = data.stitch([np.full((8, 8), 0.7)] * len(grid.positions), grid)
        np.testing.assert_allclose(rebuilt, np.full((20, 20), 0.7), atol=1e-12)

    def test_disagreeing_overlap_averages(self):
        grid = data.make_grid((4, 6), 4, 2)
        assert grid.positions == ((0, 0), (0, 2))
        rebuilt = data.stitch([np.zeros((4, 4)), np.ones((4, 4))], grid)
        np.testing.assert_array_equal(rebuilt[:, :2], np.zeros((4, 2)))
        np.testing.assert_array_equal(rebuilt[:, 2:4], np.full((4, 2), 0.5))
        np.testing.assert_array_equal(rebuilt[:, 4:], np.ones((4, 2)))

    def test_patch_count_mismatch_rejected(self):
        grid = data.make_grid((20, 20), 10, 0)
        with pytest.raises(ValueError):
            data.stitch([np.zeros((10, 10))], grid)

    def test_extract_works_on_rgb(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(24, 24, 3))
        grid = data.make_grid((24, 24), 12, 0)
        patches = data.extract(img, grid)
        assert patches[0].shape == (12, 12, 3)
        np.testing.assert_array_equal(patches[3], img[12:, 12:])

    def test_grid_json_round_trip(self):
        grid = data.make_grid((900, 640), 400, 200)
        again = data.grid_from_json(data.grid_to_json(grid))
        assert again == grid


class TestKfold:
    def test_fifty_ids_five_even_folds(self):
        ids = [f"wsi{i:02d}" for i in range(50)]
        fa = data.kfold_split(ids, k=5, seed=11)
        sizes = [len(fa.members(f)) for f in range(5)]
        assert sizes == [10, 10, 10, 10, 10]

    def test_partition_properties(self):
        ids = [f"w{i}" for i in range(23)]
        fa = data.kfold_split(ids, k=5, seed=3)
        all_members = [w for f in range(5) for w in fa.members(f)]
        assert sorted(all_members) == sorted(ids)
        sizes = [len(fa.members(f)) for f in range(5)]
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic_and_seed_sensitive(self):
        ids = [f"w{i}" for i in range(12)]
        a = data.kfold_split(ids, k=4, seed=5)
        b = data.kfold_split(ids, k=4, seed=5)
        c = data.kfold_split(ids, k=4, seed=6)
        assert a.wsi_to_fold == b.wsi_to_fold
        assert a.wsi_to_fold != c.wsi_to_fold

    def test_too_few_ids_rejected(self):
        with pytest.raises(ValueError):
            data.kfold_split(["a", "b"], k=3, seed=0)

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            data.kfold_split(["a", "a", "b"], k=2, seed=0)


class TestAugment:
    def _pair(self, seed=0, size=8):
        rng = np.random.default_rng(seed)
        img = rng.uniform(size=(size, size, 3)).astype(np.float32)
        mask = (rng.uniform(size=(size, size)) > 0.5).astype(np.uint8)
        return img, mask

    def test_p_zero_identity(self):
        img, mask = self._pair()
        cfg = data.AugmentConfig(p=0.0)
        out_img, out_mask = data.augment(img, mask, cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(out_img, img)
        np.testing.assert_array_equal(out_mask, mask)

    def test_rot180_twice_is_identity(self):
        img, mask = self._pair(1)
        once = data.rotate90(img, mask, 2)
        twice = data.rotate90(once[0], once[1], 2)
        np.testing.assert_array_equal(twice[0], img)
        np.testing.assert_array_equal(twice[1], mask)

    def test_rot90_coordinate_oracle(self):
        _, mask = self._pair(2, size=5)
        img = np.zeros((5, 5, 3), dtype=np.float32)
        _, rot = data.rotate90(img, mask, 1)
        n = 5
        for r in range(n):
            for c in range(n):
                # counterclockwise quarter turn sources from (c, n-1-r)
                assert rot[r, c] == mask[c, n - 1 - r]

    def test_flip_coordinate_oracles(self):
        img, mask = self._pair(3, size=6)
        _, fh = data.flip_h(img, mask)
        _, fv = data.flip_v(img, mask)
        for r in range(6):
            for c in range(6):
                assert fh[r, c] == mask[r, 5 - c]
                assert fv[r, c] == mask[5 - r, c]

    def test_geometry_moves_image_and_mask_together(self):
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[1, 2] = 1
        marked = np.full((6, 6, 3), 0.25, dtype=np.float32)
        marked[1, 2] = 1.0
        cfg = data.AugmentConfig(p=1.0, brightness=0, contrast=0, saturation=0, hue=0)
        out_img, out_mask = data.augment(marked, mask, cfg, np.random.default_rng(7))
        r, c = np.argwhere(out_mask == 1)[0]
        assert out_img[r, c, 0] == 1.0 and out_img.max() == 1.0

    def test_mask_binary_and_image_in_range(self):
        cfg = data.AugmentConfig()
        rng = np.random.default_rng(5)
        for _ in range(20):
            img, mask = self._pair(int(rng.integers(1000)))
            out_img, out_mask = data.augment(img, mask, cfg, rng)
            assert set(np.unique(out_mask)) <= {0, 1}
            assert out_img.min() >= 0.0 and out_img.max() <= 1.0

    def test_deterministic_per_seed(self):
        img, mask = self._pair(6)
        cfg = data.AugmentConfig()
        a = data.augment(img, mask, cfg, np.random.default_rng(42))
        b = data.augment(img, mask, cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_hsv_round_trip(self):
        rng = np.random.default_rng(7)
        rgb = rng.uniform(size=(10, 10, 3))
        back = data.hsv_to_rgb(data.rgb_to_hsv(rgb))
        assert np.abs(back - rgb).max() < 1e-9


class TestSynth:
    def test_same_seed_bitwise_identical(self):
        a = data.synth_generate(5, 48, seed=9)
        b = data.synth_generate(5, 48, seed=9)
        for (ia, ma), (ib, mb) in zip(a, b):
            assert np.array_equal(ia, ib) and np.array_equal(ma, mb)

    def test_masks_binary_and_nonempty(self):
        for img, mask in data.synth_generate(20, 48, seed=10):
            assert mask.dtype == np.uint8
            assert set(np.unique(mask)) <= {0, 1}
            assert mask.any()
            assert img.dtype == np.float32
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_mean_foreground_fraction_in_contract_range(self):
        pairs = data.synth_generate(100, 64, seed=11)
        fractions = [m.mean() for _, m in pairs]
        assert 0.1 <= np.mean(fractions) <= 0.6

    def test_tumour_regions_differ_from_background(self):
        img, mask = data.synth_generate(1, 64, seed=12)[0]
        fg = img[mask == 1].mean(axis=0)
        bg = img[mask == 0].mean(axis=0)
        assert np.abs(fg - bg).max() > 0.1

    def test_size_floor(self):
        with pytest.raises(ValueError):
            data.synth_generate(1, 16, seed=0)


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        pairs = data.synth_generate(6, 48, seed=13)
        manifest = data.save_dataset(tmp_path, pairs, seed=13)
        assert len(manifest["ids"]) == 6
        img, mask = data.load_pair(tmp_path, manifest["ids"][0])
        np.testing.assert_array_equal(mask, pairs[0][1])
        assert np.abs(img - pairs[0][0]).max() <= (0.5 / 255 + 1e-6)

    def test_each_image_is_its_own_slide_with_fold(self, tmp_path):
        pairs = data.synth_generate(10, 48, seed=14)
        manifest = data.save_dataset(tmp_path, pairs, seed=14)
        assert all(manifest["wsi"][sid] == sid for sid in manifest["ids"])
        folds = set(manifest["fold"].values())
        assert folds == {0, 1, 2, 3, 4}

    def test_small_dataset_skips_folds(self, tmp_path):
        pairs = data.synth_generate(3, 48, seed=15)
        manifest = data.save_dataset(tmp_path, pairs, seed=15)
        assert all(f is None for f in manifest["fold"].values())

    def test_rewrite_is_byte_identical(self, tmp_path):
        pairs = data.synth_generate(4, 48, seed=16)
        first = tmp_path / "a"
        second = tmp_path / "b"
        data.save_dataset(first, pairs, seed=16)
        data.save_dataset(second, pairs, seed=16)
        for rel in ["manifest.json", "images/sample0000.png", "masks/sample0003.png"]:
            assert (first / rel).read_bytes() == (second / rel).read_bytes()
