from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t1moco.containers import (
    FitConfig,
    ImageSeries,
    MaskSet,
    ParametricMaps,
    VelocityFieldSet,
    min_max_normalize,
    validate_series,
)
from t1moco.errors import (
    ConstantSeriesError,
    InvalidConfigError,
    NonFiniteValueError,
    NonIncreasingTimestampsError,
    ShapeMismatchError,
    TooFewFramesError,
)
from t1moco.phantom import default_timestamps

from conftest import series_from


def test_valid_stone_like_series():
    frames = np.random.default_rng(0).random((11, 160, 160))
    series = ImageSeries(frames, default_timestamps(11))
    validate_series(series)
    assert series.n_frames == 11
    assert series.shape == (160, 160)


def test_too_few_frames():
    with pytest.raises(TooFewFramesError):
        ImageSeries(np.zeros((2, 8, 8)), [100.0, 200.0])


def test_tied_timestamps_rejected():
    with pytest.raises(NonIncreasingTimestampsError):
        ImageSeries(np.zeros((3, 8, 8)), [100.0, 100.0, 200.0])


def test_negative_first_timestamp_rejected():
    with pytest.raises(NonIncreasingTimestampsError):
        ImageSeries(np.zeros((3, 8, 8)), [-5.0, 100.0, 200.0])


def test_non_finite_frames_rejected():
    frames = np.zeros((3, 8, 8))
    frames[1, 4, 4] = np.nan
    with pytest.raises(NonFiniteValueError):
        ImageSeries(frames, [100.0, 200.0, 300.0])


def test_timestamp_count_mismatch():
    with pytest.raises(ShapeMismatchError):
        ImageSeries(np.zeros((4, 8, 8)), [100.0, 200.0, 300.0])


def test_frames_are_read_only():
    series = series_from(np.zeros((3, 8, 8)))
    with pytest.raises(ValueError):
        series.frames[0, 0, 0] = 1.0


def test_min_max_normalize_endpoints():
    frames = np.full((3, 4, 4), 500.0)
    frames[0, 0, 0] = -500.0
    frames[2, 3, 3] = 1500.0
    out = min_max_normalize(series_from(frames))
    assert out.frames.min() == 0.0
    assert out.frames.max() == 1.0
    assert out.frames[0, 0, 0] == 0.0
    assert out.frames[2, 3, 3] == 1.0
    np.testing.assert_array_equal(out.timestamps, series_from(frames).timestamps)


def test_min_max_normalize_identity_on_normalized():
    rng = np.random.default_rng(3)
    frames = rng.random((4, 6, 6))
    frames[0, 0, 0] = 0.0
    frames[1, 1, 1] = 1.0
    series = series_from(frames)
    out = min_max_normalize(series)
    np.testing.assert_array_equal(out.frames, series.frames)


def test_min_max_normalize_constant_series():
    with pytest.raises(ConstantSeriesError):
        min_max_normalize(series_from(np.full((3, 4, 4), 7.0)))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_normalize_valid_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    frames = rng.normal(scale=100.0, size=(5, 6, 6))
    out = min_max_normalize(series_from(frames))
    validate_series(out)
    again = min_max_normalize(out)
    np.testing.assert_array_equal(again.frames, out.frames)


def test_parametric_maps_validation():
    with pytest.raises(ShapeMismatchError):
        ParametricMaps(np.zeros((4, 4)), np.zeros((5, 4)))
    with pytest.raises(NonFiniteValueError):
        ParametricMaps(np.full((4, 4), np.inf), np.zeros((4, 4)))


def test_velocity_field_set_indexing():
    fields = VelocityFieldSet(np.zeros((3, 8, 8, 2)), reference_index=1)
    assert fields.n_frames == 4
    assert fields.field_for_frame(1) is None
    assert fields.field_index(0) == 0
    assert fields.field_index(2) == 1
    assert fields.field_index(3) == 2
    with pytest.raises(IndexError):
        fields.field_index(1)


def test_velocity_field_set_rejects_bad_shape():
    with pytest.raises(ShapeMismatchError):
        VelocityFieldSet(np.zeros((3, 8, 8)), 0)


def test_mask_set_values():
    MaskSet(np.ones((3, 4, 4), dtype=np.uint8))
    with pytest.raises(NonFiniteValueError):
        MaskSet(np.full((3, 4, 4), 0.5))


def test_fit_config_defaults_follow_reference_weights():
    cfg = FitConfig()
    assert cfg.lambda_fit == 1.0
    assert cfg.lambda_smooth == 500.0
    assert cfg.lambda_seg == 70000.0
    assert cfg.reference_index == 0
    assert cfg.integration_steps == 7
    assert (cfg.t1_min, cfg.t1_max) == (50.0, 5000.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lambda_fit": -1.0},
        {"outer_iterations": -1},
        {"integration_steps": 0},
        {"step_size": 0.0},
        {"t1_min": 0.0},
        {"t1_min": 600.0, "t1_max": 500.0},
        {"refit_interval": 0},
        {"levels": 0},
    ],
)
def test_fit_config_rejects_bad_values(kwargs):
    with pytest.raises(InvalidConfigError):
        FitConfig(**kwargs)
