"""Core containers for inversion-recovery series, maps, fields and masks.

All containers are frozen dataclasses holding read-only numpy arrays, so
instances are safe to share across parallel workers without locking.
Invariants are checked at construction time; an invalid container cannot
exist after ``__post_init__`` returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ConstantSeriesError,
    InvalidConfigError,
    NonFiniteValueError,
    NonIncreasingTimestampsError,
    ShapeMismatchError,
    TooFewFramesError,
)

MIN_FRAMES = 3


def _freeze(a: np.ndarray) -> np.ndarray:
    """Return a read-only float64 copy of ``a``."""
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageSeries:
    """N co-located 2D frames with per-frame inversion times.

    Attributes:
        frames: (N, H, W) intensities in normalized units.
        timestamps: (N,) inversion times in ms, strictly increasing, positive.
        spacing: (row_mm, col_mm) voxel spacing.
    """

    frames: np.ndarray
    timestamps: np.ndarray
    spacing: tuple[float, float] = (2.1, 2.1)

    def __post_init__(self):
        object.__setattr__(self, "frames", _freeze(np.atleast_3d(self.frames)))
        object.__setattr__(self, "timestamps", _freeze(self.timestamps).ravel())
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        validate_series(self)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class ParametricMaps:
    """Per-voxel T1 (ms) and M0 (normalized intensity) maps.

    T1 of 0 is the sentinel for voxels excluded from fitting; produced maps
    otherwise keep T1 inside the configured clamp range.
    """

    t1: np.ndarray
    m0: np.ndarray

    def __post_init__(self):
        t1 = _freeze(self.t1)
        m0 = _freeze(self.m0)
        if t1.ndim != 2 or t1.shape != m0.shape:
            raise ShapeMismatchError(f"t1 {t1.shape} and m0 {m0.shape} must be equal 2D shapes")
        if not (np.isfinite(t1).all() and np.isfinite(m0).all()):
            raise NonFiniteValueError("parametric maps must be finite")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "m0", m0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.t1.shape


@dataclass(frozen=True)
class VelocityFieldSet:
    """One stationary velocity field per non-reference frame.

    ``fields[k]`` belongs to frame ``k`` if ``k < reference_index`` else
    frame ``k + 1``; the reference frame itself deforms by the identity.
    Components are (row, col) in voxel units.
    """

    fields: np.ndarray
    reference_index: int = 0

    def __post_init__(self):
        f = _freeze(self.fields)
        if f.ndim != 4 or f.shape[-1] != 2:
            raise ShapeMismatchError(f"fields must be (N-1, H, W, 2), got {f.shape}")
        if not np.isfinite(f).all():
            raise NonFiniteValueError("velocity components must be finite")
        r = int(self.reference_index)
        if not 0 <= r <= f.shape[0]:
            raise InvalidConfigError(f"reference_index {r} out of range for {f.shape[0] + 1} frames")
        object.__setattr__(self, "fields", f)
        object.__setattr__(self, "reference_index", r)

    @property
    def n_frames(self) -> int:
        return self.fields.shape[0] + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.fields.shape[1], self.fields.shape[2]

    def field_index(self, frame: int) -> int:
        """Storage row of ``frame``'s field; the reference frame has none."""
        if frame == self.reference_index:
            raise IndexError(f"frame {frame} is the reference frame; its deformation is identity")
        return frame if frame < self.reference_index else frame - 1

    def field_for_frame(self, frame: int) -> Optional[np.ndarray]:
        """(H, W, 2) velocity of ``frame`` or None for the reference frame."""
        if frame == self.reference_index:
            return None
        return self.fields[self.field_index(frame)]

    @classmethod
    def zeros(cls, n_frames: int, shape: tuple[int, int], reference_index: int = 0) -> "VelocityFieldSet":
        return cls(np.zeros((n_frames - 1, shape[0], shape[1], 2)), reference_index)


@dataclass(frozen=True)
class MaskSet:
    """N binary myocardium masks, co-located with an image series."""

    masks: np.ndarray

    def __post_init__(self):
        m = np.array(self.masks, copy=True)
        if m.ndim != 3:
            raise ShapeMismatchError(f"masks must be (N, H, W), got {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise NonFiniteValueError("mask values must be 0 or 1")
        m = m.astype(np.uint8)
        m.setflags(write=False)
        object.__setattr__(self, "masks", m)

    @property
    def n_frames(self) -> int:
        return self.masks.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[1], self.masks.shape[2]


@dataclass(frozen=True)
class FitConfig:
    """Weights, solver controls and conventions for fitting and registration.

    The loss weights default to the reference operating point
    (fit 1, smoothness 500, segmentation 70000).
    """

    lambda_fit: float = 1.0
    lambda_smooth: float = 500.0
    lambda_seg: float = 70000.0
    outer_iterations: int = 40
    integration_steps: int = 7
    step_size: float = 1.0
    t1_min: float = 50.0
    t1_max: float = 5000.0
    tolerance: float = 1e-5
    seed: int = 0
    refit_interval: int = 5
    levels: int = 3
    reference_index: int = 0
    magnitude_mode: bool = False
    max_halvings: int = 10
    range_tolerance: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_fit, self.lambda_smooth, self.lambda_seg) < 0:
            raise InvalidConfigError("loss weights must be nonnegative")
        if self.outer_iterations < 0:
            raise InvalidConfigError("outer_iterations must be >= 0")
        if self.integration_steps < 1:
            raise InvalidConfigError("integration_steps must be >= 1")
        if self.step_size <= 0:
            raise InvalidConfigError("step_size must be positive")
        if not 0 < self.t1_min < self.t1_max:
            raise InvalidConfigError("need 0 < t1_min < t1_max")
        if self.tolerance < 0:
            raise InvalidConfigError("tolerance must be nonnegative")
        if self.refit_interval < 1:
            raise InvalidConfigError("refit_interval must be >= 1")
        if self.levels < 1:
            raise InvalidConfigError("levels must be >= 1")
        if self.reference_index < 0:
            raise InvalidConfigError("reference_index must be >= 0")
        if self.max_halvings < 0:
            raise InvalidConfigError("max_halvings must be >= 0")

    def updated(self, **kwargs) -> "FitConfig":
        return replace(self, **kwargs)


def validate_series(series: ImageSeries) -> None:
    """Raise the specific :class:`ValidationError` violated by ``series``, if any."""
    frames = np.asarray(series.frames)
    ts = np.asarray(series.timestamps)
    if frames.ndim != 3:
        raise ShapeMismatchError(f"frames must be (N, H, W), got {frames.shape}")
    if frames.shape[0] < MIN_FRAMES:
        raise TooFewFramesError(f"need at least {MIN_FRAMES} frames, got {frames.shape[0]}")
    if ts.shape[0] != frames.shape[0]:
        raise ShapeMismatchError(f"{frames.shape[0]} frames but {ts.shape[0]} timestamps")
    if not np.isfinite(ts).all() or ts[0] <= 0 or np.any(np.diff(ts) <= 0):
        raise NonIncreasingTimestampsError("timestamps must be positive and strictly increasing")
    if not np.isfinite(frames).all():
        raise NonFiniteValueError("frame intensities must be finite")


def min_max_normalize(series: ImageSeries) -> ImageSeries:
    """Rescale intensities so the whole series spans [0, 1].

    A single global min/max is used across all frames; per-frame scaling
    would destroy the relative inversion-recovery amplitudes. Timestamps
    and spacing are unchanged. Idempotent on already-normalized input.
    """
    lo = float(series.frames.min())
    hi = float(series.frames.max())
    if hi == lo:
        raise ConstantSeriesError("cannot normalize a constant series")
    return ImageSeries((series.frames - lo) / (hi - lo), series.timestamps, series.spacing)
