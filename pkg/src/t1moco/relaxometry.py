"""Inversion-recovery signal model and per-voxel nonlinear least-squares fitting.

The signal model is the signed longitudinal recovery

    S(t) = m0 * (1 - 2 * exp(-t / t1))

fitted by multi-start damped Gauss-Newton: T1 starts on a logarithmic grid
over the clamp range, M0 solved in closed form per start, then a
Levenberg-damped Gauss-Newton polish with multiplicative (x10 / /10)
damping adjustment. The kernel is vectorized over voxels; each voxel's
trajectory depends only on its own samples, so a single voxel fitted alone
is bit-identical to the same voxel fitted inside a whole map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .containers import FitConfig, ImageSeries, ParametricMaps
from .errors import ConstantObservedError, NonPositiveT1Error, ShapeMismatchError

N_STARTS = 8
_MAX_ITER = 60
_LAMBDA_INIT = 1e-3
_LAMBDA_MIN = 1e-12
_LAMBDA_MAX = 1e10
_STEP_TOL = 1e-9


@dataclass(frozen=True)
class VoxelFit:
    """Result of fitting one voxel's intensity series."""

    t1: float
    m0: float
    sse: float
    r2: float
    converged: bool
    clamped: bool = False


def ir_signal(m0, t1, t):
    """Signed inversion-recovery signal m0 * (1 - 2*exp(-t/t1)).

    Broadcasts over array arguments. t1 must be strictly positive.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    if np.any(t1 <= 0):
        raise NonPositiveT1Error("t1 must be > 0")
    t = np.asarray(t, dtype=np.float64)
    out = np.asarray(m0, dtype=np.float64) * (1.0 - 2.0 * np.exp(-t / t1))
    return out if out.ndim else float(out)


def ir_signal_jacobian(m0, t1, t):
    """Partials (dS/dm0, dS/dt1) of the inversion-recovery signal."""
    t1 = np.asarray(t1, dtype=np.float64)
    if np.any(t1 <= 0):
        raise NonPositiveT1Error("t1 must be > 0")
    m0 = np.asarray(m0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-t / t1)
    d_m0 = 1.0 - 2.0 * e
    d_t1 = -2.0 * m0 * (t / t1**2) * e
    if d_m0.ndim == 0:
        return float(d_m0), float(d_t1)
    return d_m0, np.broadcast_to(d_t1, d_m0.shape)


def r_squared(observed, predicted) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot about the observed mean."""
    y = np.asarray(observed, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ShapeMismatchError(f"observed {y.shape} vs predicted {p.shape}")
    if y.size < 2:
        raise ConstantObservedError("need at least 2 samples")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ConstantObservedError("observed samples are constant")
    ss_res = float(((y - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def t1_grid_starts(t1_min: float, t1_max: float, n: int = N_STARTS) -> np.ndarray:
    """Logarithmically spaced T1 initializations covering the clamp range."""
    return np.geomspace(t1_min, t1_max, n)


def _sse(values: np.ndarray, t: np.ndarray, m0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    pred = m0[:, None] * (1.0 - 2.0 * np.exp(-t[None, :] / t1[:, None]))
    r = pred - values
    return (r * r).sum(axis=1)


def _gauss_newton(values, t, m0, t1, t1_min, t1_max, max_iter=_MAX_ITER):
    """Damped Gauss-Newton polish, vectorized over voxels.

    values: (V, N); m0, t1: (V,). Returns (m0, t1, sse, converged).
    """
    m0 = m0.copy()
    t1 = t1.copy()
    sse = _sse(values, t, m0, t1)
    lam = np.full(m0.shape, _LAMBDA_INIT)
    converged = np.zeros(m0.shape, dtype=bool)
    active = np.ones(m0.shape, dtype=bool)

    for _ in range(max_iter):
        e = np.exp(-t[None, :] / t1[:, None])
        f = 1.0 - 2.0 * e
        r = m0[:, None] * f - values
        j1 = (-2.0 * m0[:, None]) * (t[None, :] / (t1**2)[:, None]) * e
        a00 = (f * f).sum(axis=1)
        a01 = (f * j1).sum(axis=1)
        a11 = (j1 * j1).sum(axis=1)
        g0 = (f * r).sum(axis=1)
        g1 = (j1 * r).sum(axis=1)

        d00 = a00 * (1.0 + lam)
        d11 = a11 * (1.0 + lam)
        det = d00 * d11 - a01 * a01
        ok = det > 0
        safe_det = np.where(ok, det, 1.0)
        delta0 = np.where(ok, -(d11 * g0 - a01 * g1) / safe_det, -g0 / np.maximum(d00, 1e-300))
        delta1 = np.where(ok, -(d00 * g1 - a01 * g0) / safe_det, 0.0)

        m0_new = m0 + delta0
        t1_new = np.clip(t1 + delta1, t1_min, t1_max)
        sse_new = _sse(values, t, m0_new, t1_new)
        better = np.isfinite(sse_new) & (sse_new < sse)

        accept = active & better
        m0 = np.where(accept, m0_new, m0)
        t1 = np.where(accept, t1_new, t1)
        sse = np.where(accept, sse_new, sse)
        lam = np.where(
            active,
            np.where(better, np.maximum(lam * 0.1, _LAMBDA_MIN), np.minimum(lam * 10.0, _LAMBDA_MAX)),
            lam,
        )

        step_small = (np.abs(delta0) <= _STEP_TOL * (1.0 + np.abs(m0))) & (
            np.abs(delta1) <= _STEP_TOL * (1.0 + np.abs(t1))
        )
        stuck = ~better & (lam >= _LAMBDA_MAX)
        newly = active & ((accept & step_small) | stuck)
        converged |= newly
        active &= ~newly
        if not active.any():
            break

    return m0, t1, sse, converged


def _fit_signed_batch(values, t, t1_min, t1_max, n_starts=N_STARTS, warm=None):
    """Multi-start fit of the signed model; vectorized over voxels.

    values: (V, N). ``warm`` optionally provides (m0, t1) arrays used as the
    only start (fast refit path). Returns (m0, t1, sse, converged).
    """
    v = values.shape[0]
    best_m0 = np.zeros(v)
    best_t1 = np.full(v, t1_min)
    best_sse = np.full(v, np.inf)
    best_conv = np.zeros(v, dtype=bool)

    if warm is not None:
        starts = [(np.asarray(warm[0], dtype=np.float64), np.asarray(warm[1], dtype=np.float64))]
    else:
        starts = []
        for t1_0 in t1_grid_starts(t1_min, t1_max, n_starts):
            f = 1.0 - 2.0 * np.exp(-t / t1_0)
            denom = float((f * f).sum())
            m0_0 = values @ f / denom
            starts.append((m0_0, np.full(v, t1_0)))

    for m0_0, t1_0 in starts:
        t1_0 = np.clip(t1_0, t1_min, t1_max)
        m0_k, t1_k, sse_k, conv_k = _gauss_newton(values, t, m0_0, t1_0, t1_min, t1_max)
        improved = sse_k < best_sse
        best_m0 = np.where(improved, m0_k, best_m0)
        best_t1 = np.where(improved, t1_k, best_t1)
        best_sse = np.where(improved, sse_k, best_sse)
        best_conv = np.where(improved, conv_k, best_conv)

    return best_m0, best_t1, best_sse, best_conv


def _fit_batch(values, t, config: FitConfig, warm=None):
    """Full fitting kernel: degenerate handling, optional polarity restoration.

    values: (V, N) float64. Returns (m0, t1, sse, r2, converged, clamped).
    """
    values = np.asarray(values, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    v = values.shape[0]

    degenerate = np.ptp(values, axis=1) == 0.0

    if config.magnitude_mode and warm is None:
        # Restore polarity: samples before the candidate zero crossing are
        # negative in the signed model; try every crossing position.
        n = values.shape[1]
        m0 = np.zeros(v)
        t1 = np.full(v, config.t1_min)
        sse = np.full(v, np.inf)
        conv = np.zeros(v, dtype=bool)
        for k in range(n + 1):
            signed = values.copy()
            signed[:, :k] *= -1.0
            m0_k, t1_k, sse_k, conv_k = _fit_signed_batch(signed, t, config.t1_min, config.t1_max)
            improved = sse_k < sse
            m0 = np.where(improved, m0_k, m0)
            t1 = np.where(improved, t1_k, t1)
            sse = np.where(improved, sse_k, sse)
            conv = np.where(improved, conv_k, conv)
    else:
        m0, t1, sse, conv = _fit_signed_batch(values, t, config.t1_min, config.t1_max, warm=warm)

    # Degenerate voxels: m0 pinned to the constant level, t1 at the lower bound.
    if degenerate.any():
        m0_d = values.mean(axis=1)
        t1_d = np.full(v, config.t1_min)
        sse_d = _sse(values, t, m0_d, t1_d)
        m0 = np.where(degenerate, m0_d, m0)
        t1 = np.where(degenerate, t1_d, t1)
        sse = np.where(degenerate, sse_d, sse)
        conv = np.where(degenerate, False, conv)

    ss_tot = ((values - values.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    r2 = np.where(ss_tot > 0, 1.0 - sse / np.where(ss_tot > 0, ss_tot, 1.0), 0.0)
    clamped = ~degenerate & ((t1 <= config.t1_min) | (t1 >= config.t1_max))
    return m0, t1, sse, r2, conv, clamped


def fit_voxel(values, timestamps, config: Optional[FitConfig] = None) -> VoxelFit:
    """Fit (t1, m0) for a single voxel's intensity series.

    The returned residual is no worse than every grid start's converged
    residual. Voxels with constant samples are flagged converged=False
    with m0 at the constant level and t1 at the lower clamp.
    """
    config = config or FitConfig()
    values = np.asarray(values, dtype=np.float64).ravel()
    t = np.asarray(timestamps, dtype=np.float64).ravel()
    if values.shape != t.shape:
        raise ShapeMismatchError(f"{values.size} values vs {t.size} timestamps")
    m0, t1, sse, r2, conv, clamped = _fit_batch(values[None, :], t, config)
    return VoxelFit(
        t1=float(t1[0]),
        m0=float(m0[0]),
        sse=float(sse[0]),
        r2=float(r2[0]),
        converged=bool(conv[0]),
        clamped=bool(clamped[0]),
    )


def fit_map(
    series: ImageSeries,
    config: Optional[FitConfig] = None,
    roi: Optional[np.ndarray] = None,
):
    """Per-voxel fit over ``roi`` (default: every voxel).

    Voxels outside the roi get the t1 = 0 sentinel (m0 = 0, r2 = 0) and are
    excluded from downstream statistics. Per-voxel failures are flagged,
    never raised, so whole-map fitting is total.

    Returns (ParametricMaps, r2_map).
    """
    config = config or FitConfig()
    h, w = series.shape
    n = series.n_frames
    values = series.frames.reshape(n, h * w).T
    if roi is None:
        sel = np.ones(h * w, dtype=bool)
    else:
        roi = np.asarray(roi)
        if roi.shape != (h, w):
            raise ShapeMismatchError(f"roi {roi.shape} vs frames {(h, w)}")
        sel = roi.astype(bool).ravel()

    t1_map = np.zeros(h * w)
    m0_map = np.zeros(h * w)
    r2_map = np.zeros(h * w)
    if sel.any():
        m0, t1, _, r2, _, _ = _fit_batch(values[sel], series.timestamps, config)
        t1_map[sel] = t1
        m0_map[sel] = m0
        r2_map[sel] = r2

    maps = ParametricMaps(t1=t1_map.reshape(h, w), m0=m0_map.reshape(h, w))
    return maps, r2_map.reshape(h, w)


def synthesize_series(maps: ParametricMaps, timestamps, spacing=(2.1, 2.1)) -> ImageSeries:
    """Render motion-free frames from parametric maps at the given inversion times.

    Sentinel voxels (t1 <= 0) render as 0 intensity.
    """
    t = np.asarray(timestamps, dtype=np.float64).ravel()
    frames = synthesize_frames(maps.t1, maps.m0, t)
    return ImageSeries(frames, t, spacing)


def synthesize_frames(t1: np.ndarray, m0: np.ndarray, timestamps: np.ndarray) -> np.ndarray:
    """(N, H, W) signed model frames; raw-array variant of :func:`synthesize_series`."""
    t = np.asarray(timestamps, dtype=np.float64).ravel()
    live = t1 > 0
    safe_t1 = np.where(live, t1, 1.0)
    frames = m0[None] * (1.0 - 2.0 * np.exp(-t[:, None, None] / safe_t1[None]))
    frames[:, ~live] = 0.0
    return frames
