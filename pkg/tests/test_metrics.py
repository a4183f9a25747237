from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t1moco.containers import FitConfig
from t1moco.errors import EmptyMaskError, ShapeMismatchError
from t1moco.metrics import boundary_voxels, dice, evaluate, hausdorff
from t1moco.optim import joint_fit
from t1moco.phantom import PhantomConfig, generate_phantom

from conftest import brute_force_dice, brute_force_hausdorff, random_blob_mask

STATIC = dict(translation_min=0.0, translation_max=0.0, deform_amplitude=0.0, snr=0.0)


class TestDice:
    def test_identical(self):
        m = np.zeros((6, 6), dtype=np.uint8)
        m[2:4, 2:4] = 1
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((6, 6), dtype=np.uint8)
        b = np.zeros((6, 6), dtype=np.uint8)
        a[0, 0] = 1
        b[5, 5] = 1
        assert dice(a, b) == 0.0

    def test_two_voxel_masks_sharing_one(self):
        a = np.zeros((4, 4), dtype=np.uint8)
        b = np.zeros((4, 4), dtype=np.uint8)
        a[1, 1] = a[1, 2] = 1
        b[1, 2] = b[1, 3] = 1
        assert dice(a, b) == 0.5

    def test_both_empty(self):
        z = np.zeros((4, 4), dtype=np.uint8)
        assert dice(z, z) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            dice(np.zeros((4, 4)), np.zeros((4, 5)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_symmetry_and_oracle(self, seed):
        r = np.random.default_rng(seed)
        a = (r.random((8, 8)) > 0.6).astype(np.uint8)
        b = (r.random((8, 8)) > 0.6).astype(np.uint8)
        assert dice(a, b) == dice(b, a)
        assert dice(a, b) == pytest.approx(brute_force_dice(a, b), rel=1e-15)


class TestHausdorff:
    def test_identical_masks(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[2:6, 3:7] = 1
        assert hausdorff(m, m) == 0.0

    def test_three_columns_apart(self):
        a = np.zeros((8, 8), dtype=np.uint8)
        b = np.zeros((8, 8), dtype=np.uint8)
        a[4, 1] = 1
        b[4, 4] = 1
        assert hausdorff(a, b, (2.1, 2.1)) == pytest.approx(6.3, rel=1e-12)

    def test_two_voxel_case_exact(self):
        a = np.zeros((8, 8), dtype=np.uint8)
        b = np.zeros((8, 8), dtype=np.uint8)
        a[3, 2] = 1
        b[3, 4] = 1
        assert hausdorff(a, b, (2.1, 2.1)) == 4.2

    def test_empty_mask_rejected(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        full = np.ones((4, 4), dtype=np.uint8)
        with pytest.raises(EmptyMaskError):
            hausdorff(m, full)

    def test_anisotropic_spacing(self):
        a = np.zeros((8, 8), dtype=np.uint8)
        b = np.zeros((8, 8), dtype=np.uint8)
        a[1, 1] = 1
        b[4, 1] = 1  # three rows apart
        assert hausdorff(a, b, (1.5, 2.1)) == pytest.approx(4.5, rel=1e-12)

    def test_symmetry(self, rng):
        a = random_blob_mask(rng)
        b = random_blob_mask(rng)
        assert hausdorff(a, b) == hausdorff(b, a)

    def test_zero_iff_equal_boundaries(self, rng):
        a = random_blob_mask(rng)
        b = a.copy()
        assert hausdorff(a, b) == 0.0
        b[0, 0] = 1 - b[0, 0]
        assert hausdorff(a, b) > 0.0

    def test_percentile_variant_not_above_max(self, rng):
        a = random_blob_mask(rng)
        b = random_blob_mask(rng)
        assert hausdorff(a, b, percentile=95.0) <= hausdorff(a, b)

    def test_exhaustive_pairs_on_2x2(self):
        cells = list(itertools.product([0, 1], repeat=4))
        masks = [np.array(m, dtype=np.uint8).reshape(2, 2) for m in cells]
        for a in masks:
            for b in masks:
                assert dice(a, b) == brute_force_dice(a, b)
                if a.any() and b.any():
                    assert hausdorff(a, b, (2.1, 2.7)) == brute_force_hausdorff(a, b, (2.1, 2.7))

    def test_random_32x32_match_brute_force(self, rng):
        for _ in range(25):
            a = random_blob_mask(rng)
            b = random_blob_mask(rng)
            assert hausdorff(a, b, (2.1, 2.1)) == brute_force_hausdorff(a, b, (2.1, 2.1))

    def test_boundary_includes_image_border(self):
        full = np.ones((4, 4), dtype=np.uint8)
        pts = boundary_voxels(full)
        assert len(pts) == 12  # all but the 2x2 interior


@pytest.fixture(scope="module")
def perfect():
    cfg = PhantomConfig(height=64, width=64, n_frames=6, **STATIC)
    scene = generate_phantom(cfg, seed=11)
    solution = joint_fit(scene.series, FitConfig(outer_iterations=0))
    return scene, solution


class TestEvaluate:
    def test_perfect_solution_scores(self, perfect):
        scene, solution = perfect
        report = evaluate(solution, scene.truth_masks, truth=scene)
        assert report.r2_mean >= 0.999
        assert report.dice_mean >= 0.99
        assert report.hausdorff_mm <= 2.1
        assert report.t1_rmse_ms is not None

    def test_truth_omitted_drops_t1_rmse(self, perfect):
        scene, solution = perfect
        report = evaluate(solution, scene.truth_masks)
        assert report.t1_rmse_ms is None
        assert "t1_rmse_ms" not in report.as_dict()

    def test_per_frame_rows(self, perfect):
        scene, solution = perfect
        report = evaluate(solution, scene.truth_masks)
        assert len(report.frames) == scene.series.n_frames - 1
        for row in report.frames:
            assert set(row) == {"frame", "dice", "hausdorff_mm"}

    def test_mask_shape_mismatch(self, perfect):
        scene, solution = perfect
        from t1moco.containers import MaskSet

        bad = MaskSet(np.zeros((6, 32, 32), dtype=np.uint8))
        with pytest.raises(ShapeMismatchError):
            evaluate(solution, bad)

    def test_pooled_r2_close_to_mean_r2_on_clean_data(self, perfect):
        scene, solution = perfect
        a = evaluate(solution, scene.truth_masks)
        b = evaluate(solution, scene.truth_masks, pooled_r2=True)
        assert b.r2_mean == pytest.approx(a.r2_mean, abs=1e-3)
