"""Synthetic moving-heart phantom with ground-truth maps, masks and motion.

The scene is a short-axis-like slice: low-M0 background tissue, a bright
LV blood-pool disc and a myocardial annulus between them, each with its
own T1, plus a smooth multiplicative T1 texture. Frames are rendered from
the truth maps with the signed recovery model, then deformed by per-frame
motion (global translation plus a smooth low-frequency field) and
corrupted by Gaussian noise. The reference frame (index 0) is never
moved, so truth displacements are expressed in the registration's frame
of reference.

Intensities are kept in normalized units (|value| <= 1) by construction;
no post-hoc rescaling is applied, so noise-free voxels follow the signal
model exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .containers import ImageSeries, MaskSet, ParametricMaps, VelocityFieldSet
from .deformation import warp
from .errors import InvalidConfigError
from .relaxometry import synthesize_frames


def default_timestamps(n: int) -> np.ndarray:
    """n inversion times from 100 ms to 4000 ms, geometrically spaced.

    Geometric spacing concentrates samples in the early recovery where the
    signal changes fastest.
    """
    if n < 3:
        raise InvalidConfigError("need at least 3 timestamps")
    return np.geomspace(100.0, 4000.0, n)


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry, tissue values, motion and noise of the synthetic scene."""

    height: int = 160
    width: int = 160
    n_frames: int = 11
    timestamps: Optional[tuple] = None
    spacing: tuple[float, float] = (2.1, 2.1)
    t1_background: float = 300.0
    t1_myocardium: float = 1100.0
    t1_blood: float = 1700.0
    m0_background: float = 0.25
    m0_myocardium: float = 0.65
    m0_blood: float = 0.8
    blood_radius_frac: float = 0.11
    myo_outer_frac: float = 0.18
    edge_width: float = 1.5
    texture_amplitude: float = 0.03
    texture_sigma_frac: float = 0.08
    translation_min: float = 2.0
    translation_max: float = 4.0
    deform_amplitude: float = 1.5
    deform_sigma_frac: float = 0.15
    snr: float = 30.0

    def __post_init__(self):
        if self.height < 64 or self.width < 64:
            raise InvalidConfigError("phantom dimensions must be at least 64x64")
        if self.n_frames < 3:
            raise InvalidConfigError("phantom needs at least 3 frames")
        if self.timestamps is not None and len(self.timestamps) != self.n_frames:
            raise InvalidConfigError("timestamps length must match n_frames")
        if not 0 <= self.translation_min <= self.translation_max:
            raise InvalidConfigError("need 0 <= translation_min <= translation_max")
        if self.deform_amplitude < 0 or self.snr < 0:
            raise InvalidConfigError("deform_amplitude and snr must be nonnegative")
        if not 0 < self.blood_radius_frac < self.myo_outer_frac < 0.5:
            raise InvalidConfigError("need 0 < blood_radius_frac < myo_outer_frac < 0.5")

    def resolved_timestamps(self) -> np.ndarray:
        if self.timestamps is None:
            return default_timestamps(self.n_frames)
        return np.asarray(self.timestamps, dtype=np.float64)


@dataclass(frozen=True)
class PhantomScene:
    """Ground truth plus the observed (moved, noisy) series."""

    truth_maps: ParametricMaps
    truth_masks: MaskSet
    truth_motion: VelocityFieldSet  # per-frame displacements, not velocities
    series: ImageSeries
    seed: int
    config: PhantomConfig = field(default=PhantomConfig())


def _ramp(d: np.ndarray, radius: float, width: float) -> np.ndarray:
    """1 inside, 0 outside, linear over ``width`` voxels centered on the radius."""
    return np.clip((radius + width / 2.0 - d) / width, 0.0, 1.0)


def _truth_maps(config: PhantomConfig, rng: np.random.Generator) -> tuple[ParametricMaps, np.ndarray]:
    h, w = config.height, config.width
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    d = np.sqrt((rr - (h - 1) / 2.0) ** 2 + (cc - (w - 1) / 2.0) ** 2)
    scale = min(h, w)
    r_blood = config.blood_radius_frac * scale
    r_outer = config.myo_outer_frac * scale

    w_blood = _ramp(d, r_blood, config.edge_width)
    w_heart = _ramp(d, r_outer, config.edge_width)
    w_myo = w_heart - w_blood
    w_bg = 1.0 - w_heart

    t1 = w_bg * config.t1_background + w_myo * config.t1_myocardium + w_blood * config.t1_blood
    m0 = w_bg * config.m0_background + w_myo * config.m0_myocardium + w_blood * config.m0_blood

    if config.texture_amplitude > 0:
        noise = rng.standard_normal((h, w))
        tex = gaussian_filter(noise, config.texture_sigma_frac * scale)
        peak = np.abs(tex).max()
        if peak > 0:
            t1 = t1 * (1.0 + config.texture_amplitude * tex / peak)

    myo_mask = ((d <= r_outer) & (d >= r_blood)).astype(np.uint8)
    return ParametricMaps(t1=t1, m0=m0), myo_mask


def _frame_motion(config: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """One (H, W, 2) displacement: global translation plus smooth deformation."""
    h, w = config.height, config.width
    mag = rng.uniform(config.translation_min, config.translation_max)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    u = np.empty((h, w, 2))
    u[..., 0] = mag * np.sin(angle)
    u[..., 1] = mag * np.cos(angle)
    if config.deform_amplitude > 0:
        sigma = config.deform_sigma_frac * min(h, w)
        smooth = gaussian_filter(rng.standard_normal((h, w, 2)), (sigma, sigma, 0.0))
        peak = np.abs(smooth).max()
        if peak > 0:
            u += config.deform_amplitude * smooth / peak
    return u


def generate_phantom(config: Optional[PhantomConfig] = None, seed: int = 0) -> PhantomScene:
    """Build a deterministic scene for the given (config, seed)."""
    config = config or PhantomConfig()
    rng = np.random.default_rng(seed)
    ts = config.resolved_timestamps()
    n = config.n_frames
    h, w = config.height, config.width

    truth_maps, clean_mask = _truth_maps(config, rng)
    clean_frames = synthesize_frames(truth_maps.t1, truth_maps.m0, ts)

    motion = np.zeros((n - 1, h, w, 2))
    for k in range(n - 1):
        motion[k] = _frame_motion(config, rng)

    frames = np.empty((n, h, w))
    masks = np.empty((n, h, w), dtype=np.uint8)
    frames[0] = clean_frames[0]
    masks[0] = clean_mask
    mask_float = clean_mask.astype(np.float64)
    for i in range(1, n):
        frames[i] = warp(clean_frames[i], motion[i - 1])
        masks[i] = (warp(mask_float, motion[i - 1]) >= 0.5).astype(np.uint8)

    if config.snr > 0:
        sigma = float(truth_maps.m0.max()) / config.snr
        frames = np.clip(frames + sigma * rng.standard_normal(frames.shape), -1.0, 1.0)

    return PhantomScene(
        truth_maps=truth_maps,
        truth_masks=MaskSet(masks),
        truth_motion=VelocityFieldSet(motion, reference_index=0),
        series=ImageSeries(frames, ts, config.spacing),
        seed=seed,
        config=config,
    )
