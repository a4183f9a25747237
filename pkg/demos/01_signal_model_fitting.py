"""
Inversion-recovery signal model and per-voxel fitting
=====================================================

The signed recovery curve S(t) = m0 * (1 - 2*exp(-t/t1)) starts at -m0,
crosses zero at t = t1*ln(2) and saturates at +m0. This script samples a
curve, fits it back from noisy values, and then fits a whole map.
"""

import numpy as np

from t1moco import FitConfig, fit_map, fit_voxel, ir_signal
from t1moco.phantom import PhantomConfig, default_timestamps, generate_phantom

# Sample a curve at geometrically spaced inversion times, like a
# free-breathing acquisition concentrated on the early recovery.
ts = default_timestamps(11)
truth_m0, truth_t1 = 0.8, 1150.0
clean = ir_signal(truth_m0, truth_t1, ts)
print("inversion times (ms):", np.round(ts, 1))
print("clean samples:       ", np.round(clean, 3))
print("zero crossing at t1*ln2 =", round(truth_t1 * np.log(2), 1), "ms")

# Fit the voxel from noisy samples. The fitter runs damped Gauss-Newton
# from a log-spaced grid of T1 starts, so it does not need a good guess.
rng = np.random.default_rng(0)
noisy = clean + 0.02 * rng.standard_normal(ts.shape)
fit = fit_voxel(noisy, ts)
print(f"\nvoxel fit: t1 = {fit.t1:.1f} ms (truth {truth_t1}), "
      f"m0 = {fit.m0:.3f} (truth {truth_m0}), r2 = {fit.r2:.5f}")

# Magnitude-reconstructed data loses the sign; the polarity-restoring mode
# recovers it by testing candidate zero-crossing positions.
mag_fit = fit_voxel(np.abs(noisy), ts, FitConfig(magnitude_mode=True))
print(f"magnitude-mode fit: t1 = {mag_fit.t1:.1f} ms, m0 = {mag_fit.m0:.3f}")

# Whole-map fitting is the same kernel vectorized over voxels. On a
# static, noise-free phantom the truth maps come back almost exactly.
scene = generate_phantom(
    PhantomConfig(height=96, width=96, n_frames=11,
                  translation_min=0, translation_max=0,
                  deform_amplitude=0, snr=0),
    seed=1,
)
maps, r2 = fit_map(scene.series)
rel = (maps.t1 - scene.truth_maps.t1) / scene.truth_maps.t1
print(f"\nmap fit over {maps.t1.size} voxels: "
      f"relative T1 RMSE = {np.sqrt(np.mean(rel**2)):.2e}, "
      f"worst r2 = {r2.min():.6f}")
