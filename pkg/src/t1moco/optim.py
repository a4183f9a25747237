"""Joint estimation of parametric maps and motion by block-coordinate descent.

The objective couples per-voxel signal-model fitting with per-frame
diffeomorphic registration. It is minimized by alternating two blocks:

(A) hold the velocity fields, refit (t1, m0) per voxel on the currently
    registered frames (exact block solve, guarded so no voxel gets worse);
(B) hold the maps, take one normalized gradient step per velocity field
    with backtracking line search (step halved until the loss decreases,
    bounded halvings).

Because the objective is separable across frames once the maps are fixed,
each frame's line search evaluates only its own terms; gradients for all
frames are computed against the same snapshot and then applied. A
three-level multi-resolution schedule (velocities upsampled and rescaled
between levels) provides the capture range for multi-voxel motion.

Every acceptance test compares totals produced by the one shared
reduction path, so the recorded trace is exactly nonincreasing and the
reference frame is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .containers import FitConfig, ImageSeries, MaskSet, ParametricMaps, VelocityFieldSet
from .deformation import _bilinear_parts, _gather, integrate_velocity, warp
from .errors import InvalidConfigError, NotNormalizedError, ShapeMismatchError
from .losses import (
    LossBreakdown,
    _evaluate,
    _LossState,
    breakdown_from_components,
    frame_loss_terms,
)
from .relaxometry import _fit_batch, fit_map, synthesize_frames, synthesize_series

_STEP_GROWTH = 2.0
_STEP_CAP_FACTOR = 8.0
_STEP_FLOOR_FACTOR = 1e-6
_MIN_LEVEL_SIZE = 32


@dataclass(frozen=True)
class JointSolution:
    """Joint minimizer: maps, per-frame velocities, and diagnostics.

    registered holds warp(I_i, exp(v_i)) with the reference frame passed
    through bit-unchanged; synthetic holds the model-rendered frames of the
    final maps. trace records the finest-level loss per accepted outer
    iteration and is exactly nonincreasing.
    """

    maps: ParametricMaps
    fields: VelocityFieldSet
    registered: ImageSeries
    synthetic: ImageSeries
    trace: tuple[LossBreakdown, ...]
    converged: bool
    config: FitConfig


def fit_uncorrected(series: ImageSeries, config: Optional[FitConfig] = None, roi=None):
    """Plain per-voxel fit of the raw frames; the no-registration baseline."""
    return fit_map(series, config or FitConfig(), roi)


def _check_normalized(series: ImageSeries, tol: float) -> None:
    lo = float(series.frames.min())
    hi = float(series.frames.max())
    if lo < -1.0 - tol or hi > 1.0 + tol:
        raise NotNormalizedError(
            f"intensity range [{lo:.4g}, {hi:.4g}] exceeds normalized bounds; "
            "min-max normalize (unipolar) or scale to [-1, 1] (signed) first"
        )


def _down2(a: np.ndarray) -> np.ndarray:
    """2x2 block mean with edge replication for odd sizes."""
    h, w = a.shape
    if h % 2:
        a = np.concatenate([a, a[-1:, :]], axis=0)
    if w % 2:
        a = np.concatenate([a, a[:, -1:]], axis=1)
    h2, w2 = a.shape
    return a.reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))


def _upsample_velocity(v: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear-resize one (h, w, 2) field to ``shape``, rescaling magnitudes."""
    h_src, w_src = v.shape[:2]
    h_dst, w_dst = shape
    rows = np.linspace(0.0, h_src - 1.0, h_dst)
    cols = np.linspace(0.0, w_src - 1.0, w_dst)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    out = _gather(v, _bilinear_parts(h_src, w_src, rr, cc))
    out[..., 0] *= h_dst / h_src
    out[..., 1] *= w_dst / w_src
    return out


def _register_stack(frames: np.ndarray, vstack: np.ndarray, ref: int, steps: int) -> np.ndarray:
    out = np.empty_like(frames)
    for i in range(frames.shape[0]):
        if i == ref:
            out[i] = frames[i]
        else:
            k = i if i < ref else i - 1
            out[i] = warp(frames[i], integrate_velocity(vstack[k], steps))
    return out


def _fit_stack(registered: np.ndarray, ts: np.ndarray, config: FitConfig, warm=None):
    """Vectorized map fit on a registered frame stack. Returns (t1, m0)."""
    n, h, w = registered.shape
    values = registered.reshape(n, h * w).T
    m0, t1, _, _, _, _ = _fit_batch(values, ts, config, warm=warm)
    return t1.reshape(h, w), m0.reshape(h, w)


def _guarded_refit(registered, ts, t1, m0, synth, fit_vec, smooth_vec, seg_vec, current, config):
    """Block (A): per-voxel warm refit, kept only where and if it helps.

    Per voxel the candidate must beat the current residual; globally the
    candidate breakdown must not exceed the current total. Returns
    (t1, m0, synth, fit_vec, current, changed).
    """
    n, h, w = registered.shape
    values = registered.reshape(n, h * w).T
    sse_cur = ((synth - registered) ** 2).sum(axis=0).ravel()
    m0_c, t1_c, sse_c, _, _, _ = _fit_batch(values, ts, config, warm=(m0.ravel(), t1.ravel()))
    better = sse_c < sse_cur
    if not better.any():
        return t1, m0, synth, fit_vec, current, False
    t1_new = np.where(better, t1_c, t1.ravel()).reshape(h, w)
    m0_new = np.where(better, m0_c, m0.ravel()).reshape(h, w)
    synth_new = synthesize_frames(t1_new, m0_new, ts)
    fit_new = np.array([float(np.mean((synth_new[i] - registered[i]) ** 2)) for i in range(n)])
    cand = breakdown_from_components(fit_new, smooth_vec, seg_vec, config)
    if cand.total <= current.total:
        return t1_new, m0_new, synth_new, fit_new, cand, True
    return t1, m0, synth, fit_vec, current, False


def _run_level(frames, ts, masks_f, vstack, ref, config: FitConfig, record_trace: bool):
    """Optimize one resolution level in place; returns level results."""
    n = frames.shape[0]
    fixed_mask = None if masks_f is None else masks_f[ref]

    registered = _register_stack(frames, vstack, ref, config.integration_steps)
    t1, m0 = _fit_stack(registered, ts, config)
    synth = synthesize_frames(t1, m0, ts)

    state = _LossState(frames, ts, synth, vstack, ref, masks_f, config)
    fit_vec, smooth_vec, seg_vec, registered, _, _, _ = _evaluate(state, want_grads=False)
    current = breakdown_from_components(fit_vec, smooth_vec, seg_vec, config)

    trace = [current] if record_trace else []
    step = np.full(n - 1, config.step_size)
    step_cap = _STEP_CAP_FACTOR * config.step_size
    step_floor = _STEP_FLOOR_FACTOR * config.step_size
    converged = False

    for it in range(1, config.outer_iterations + 1):
        prev_total = current.total

        state = _LossState(frames, ts, synth, vstack, ref, masks_f, config)
        _, _, _, _, grad_v, _, _ = _evaluate(state, want_grads=True)

        for k in range(n - 1):
            i = k if k < ref else k + 1
            g = grad_v[k]
            gmax = float(np.abs(g).max())
            if not np.isfinite(gmax) or gmax <= 0.0:
                continue
            direction = g / gmax
            s = step[k]
            accepted = False
            for _ in range(config.max_halvings + 1):
                v_cand = vstack[k] - s * direction
                fit_i, smo_i, seg_i, reg_i = frame_loss_terms(
                    frames[i], synth[i], v_cand, fixed_mask,
                    None if masks_f is None else masks_f[i], config,
                )
                cand_fit = fit_vec.copy()
                cand_smooth = smooth_vec.copy()
                cand_seg = seg_vec.copy()
                cand_fit[i] = fit_i
                cand_smooth[i] = smo_i
                cand_seg[i] = seg_i
                cand = breakdown_from_components(cand_fit, cand_smooth, cand_seg, config)
                if cand.total < current.total:
                    vstack[k] = v_cand
                    registered[i] = reg_i
                    fit_vec, smooth_vec, seg_vec = cand_fit, cand_smooth, cand_seg
                    current = cand
                    accepted = True
                    break
                s *= 0.5
            step[k] = min(s * _STEP_GROWTH, step_cap) if accepted else max(s, step_floor)

        if it % config.refit_interval == 0:
            t1, m0, synth, fit_vec, current, _ = _guarded_refit(
                registered, ts, t1, m0, synth, fit_vec, smooth_vec, seg_vec, current, config
            )

        if record_trace:
            trace.append(current)

        rel_drop = (prev_total - current.total) / max(abs(prev_total), 1e-30)
        if rel_drop < config.tolerance:
            converged = True
            break

    t1, m0, synth, fit_vec, current, changed = _guarded_refit(
        registered, ts, t1, m0, synth, fit_vec, smooth_vec, seg_vec, current, config
    )
    if record_trace and changed:
        trace.append(current)

    return vstack, t1, m0, synth, registered, trace, converged


def joint_fit(
    series: ImageSeries,
    config: Optional[FitConfig] = None,
    masks: Optional[MaskSet] = None,
) -> JointSolution:
    """Jointly estimate (t1, m0) maps and per-frame velocity fields.

    The series must already be in normalized units. When masks are given
    the segmentation term steers the fields toward anatomically consistent
    deformations; pass lambda_seg=0 to keep masks out of the objective.
    """
    config = config or FitConfig()
    _check_normalized(series, config.range_tolerance)
    n = series.n_frames
    ref = config.reference_index
    if ref >= n:
        raise InvalidConfigError(f"reference_index {ref} out of range for {n} frames")
    if masks is not None:
        if masks.n_frames != n or masks.shape != series.shape:
            raise ShapeMismatchError(f"masks {masks.masks.shape} vs series {series.frames.shape}")

    ts = series.timestamps

    if config.outer_iterations == 0:
        maps, _ = fit_map(series, config)
        vstack = np.zeros((n - 1, series.shape[0], series.shape[1], 2))
        fields = VelocityFieldSet(vstack, ref)
        synthetic = synthesize_series(maps, ts, series.spacing)
        masks_f = None if masks is None else masks.masks.astype(np.float64)
        state = _LossState(series.frames, ts, synthetic.frames, vstack, ref, masks_f, config)
        fit_vec, smooth_vec, seg_vec, registered, _, _, _ = _evaluate(state, want_grads=False)
        breakdown = breakdown_from_components(fit_vec, smooth_vec, seg_vec, config)
        return JointSolution(
            maps=maps,
            fields=fields,
            registered=ImageSeries(registered, ts, series.spacing),
            synthetic=synthetic,
            trace=(breakdown,),
            converged=True,
            config=config,
        )

    # Resolution pyramid, finest first; coarser levels must stay usable.
    pyr_frames = [np.array(series.frames)]
    pyr_masks = [None if masks is None else masks.masks.astype(np.float64)]
    levels = 1
    while levels < config.levels and min(pyr_frames[-1].shape[1:]) // 2 >= _MIN_LEVEL_SIZE:
        prev = pyr_frames[-1]
        pyr_frames.append(np.stack([_down2(prev[i]) for i in range(n)]))
        pm = pyr_masks[-1]
        pyr_masks.append(None if pm is None else np.stack([_down2(pm[i]) for i in range(n)]))
        levels += 1

    vstack = None
    trace: list[LossBreakdown] = []
    converged = False
    t1 = m0 = synth = registered = None
    for level in range(levels - 1, -1, -1):
        frames_l = pyr_frames[level]
        masks_l = pyr_masks[level]
        shape_l = frames_l.shape[1:]
        if vstack is None:
            vstack = np.zeros((n - 1, shape_l[0], shape_l[1], 2))
        else:
            vstack = np.stack([_upsample_velocity(vstack[k], shape_l) for k in range(n - 1)])
        vstack, t1, m0, synth, registered, level_trace, level_conv = _run_level(
            frames_l, ts, masks_l, vstack, ref, config, record_trace=(level == 0)
        )
        if level == 0:
            trace = level_trace
            converged = level_conv

    maps = ParametricMaps(t1=t1, m0=m0)
    return JointSolution(
        maps=maps,
        fields=VelocityFieldSet(vstack, ref),
        registered=ImageSeries(registered, ts, series.spacing),
        synthetic=ImageSeries(synth, ts, series.spacing),
        trace=tuple(trace),
        converged=converged,
        config=config,
    )
