"""Shared fixtures and independent brute-force oracles.

The oracles here are deliberately naive (explicit loops, one pair at a
time) so they stay independent of the library's vectorized paths.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from t1moco.containers import ImageSeries
from t1moco.phantom import default_timestamps


def series_from(frames, timestamps=None, spacing=(2.1, 2.1)) -> ImageSeries:
    frames = np.asarray(frames, dtype=np.float64)
    if timestamps is None:
        timestamps = default_timestamps(frames.shape[0])
    return ImageSeries(frames, timestamps, spacing)


def brute_force_dice(a: np.ndarray, b: np.ndarray) -> float:
    inter = 0
    size = 0
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            if a[r, c] and b[r, c]:
                inter += 1
            if a[r, c]:
                size += 1
            if b[r, c]:
                size += 1
    if size == 0:
        return 1.0
    return 2.0 * inter / size


def brute_force_boundary(mask: np.ndarray) -> list[tuple[int, int]]:
    h, w = mask.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            edge = r == 0 or r == h - 1 or c == 0 or c == w - 1
            if not edge:
                edge = not (mask[r - 1, c] and mask[r + 1, c] and mask[r, c - 1] and mask[r, c + 1])
            if edge:
                pts.append((r, c))
    return pts


def brute_force_hausdorff(a: np.ndarray, b: np.ndarray, spacing=(2.1, 2.1)) -> float:
    """Exhaustive O(n^2) boundary scan; rows looped, inner min vectorized."""
    sr, sc = spacing
    pa = brute_force_boundary(np.asarray(a).astype(bool))
    pb = brute_force_boundary(np.asarray(b).astype(bool))
    assert pa and pb, "oracle needs non-empty masks"
    pb_arr = np.array(pb, dtype=np.float64)

    def directed(points, targets):
        worst = -math.inf
        for r, c in points:
            d = np.sqrt(((r - targets[:, 0]) * sr) ** 2 + ((c - targets[:, 1]) * sc) ** 2)
            worst = max(worst, float(d.min()))
        return worst

    pa_arr = np.array(pa, dtype=np.float64)
    return max(directed(pa, pb_arr), directed(pb, pa_arr))


def random_blob_mask(rng: np.random.Generator, shape=(32, 32), nonempty=True) -> np.ndarray:
    from scipy.ndimage import gaussian_filter

    field = gaussian_filter(rng.standard_normal(shape), 3.0)
    mask = (field > np.percentile(field, 70)).astype(np.uint8)
    if nonempty and mask.sum() == 0:
        mask[shape[0] // 2, shape[1] // 2] = 1
    return mask


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(20240830)
