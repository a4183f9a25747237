"""
Joint motion correction and T1 mapping
======================================

The joint optimizer alternates exact per-voxel map fitting with gradient
steps on per-frame velocity fields against the coupled objective

    total = fit + 500 * smoothness + 70000 * segmentation

so the recovered deformations must be consistent with the signal
relaxation model, not just with image similarity. This script runs the
moving phantom through the uncorrected baseline and the joint fit and
compares them against ground truth.
"""

import time
from pathlib import Path

import numpy as np

from t1moco import FitConfig, evaluate, fit_uncorrected, generate_phantom, joint_fit
from t1moco.fileio import export_t1_png, save_solution
from t1moco.phantom import PhantomConfig

out_dir = Path("demo_output/correction")

scene = generate_phantom(
    PhantomConfig(height=96, width=96, translation_min=3.0, translation_max=5.0, snr=30.0),
    seed=7,
)
myo = scene.truth_masks.masks[0].astype(bool)
config = FitConfig(outer_iterations=15)

# Baseline: fit the raw frames voxel by voxel. Motion scrambles the time
# series near tissue borders, which shows up as low R2 and T1 error.
maps_unc, r2_unc = fit_uncorrected(scene.series, config)
rmse_unc = np.sqrt(np.mean((maps_unc.t1[myo] - scene.truth_maps.t1[myo]) ** 2))
print(f"uncorrected: myocardial r2 = {r2_unc[myo].mean():.4f}, T1 RMSE = {rmse_unc:.1f} ms")

# Joint fit: three resolution levels, monotone line-searched steps.
start = time.time()
solution = joint_fit(scene.series, config, scene.truth_masks)
print(f"joint fit took {time.time() - start:.1f}s, "
      f"{len(solution.trace) - 1} outer iterations, converged={solution.converged}")

report = evaluate(solution, scene.truth_masks, truth=scene)
print(f"corrected:   myocardial r2 = {report.r2_mean:.4f}, T1 RMSE = {report.t1_rmse_ms:.1f} ms, "
      f"warped-mask Dice = {report.dice_mean:.3f}, HD = {report.hausdorff_mm:.2f} mm")

totals = [b.total for b in solution.trace]
print(f"loss trace: {totals[0]:.0f} -> {totals[-1]:.0f} "
      f"(nonincreasing: {all(b <= a for a, b in zip(totals, totals[1:]))})")

save_solution(solution, out_dir)
export_t1_png(solution.maps, (0.0, 2000.0), out_dir / "t1_corrected.png")
export_t1_png(maps_unc, (0.0, 2000.0), out_dir / "t1_uncorrected.png")
export_t1_png(scene.truth_maps, (0.0, 2000.0), out_dir / "t1_truth.png")
print("solution and rendered maps written to", out_dir)
