from __future__ import annotations

import json

import numpy as np
import pytest

from t1moco.containers import FitConfig, MaskSet, ParametricMaps, VelocityFieldSet
from t1moco.errors import ChecksumError, MissingFrameError, ParseError, SizeMismatchError
from t1moco.fileio import (
    export_t1_png,
    load_fields,
    load_maps,
    load_masks,
    load_phantom_scene,
    load_series,
    load_solution,
    parse_config_file,
    save_fields,
    save_maps,
    save_masks,
    save_phantom_scene,
    save_series,
    save_solution,
    t1_colormap,
    validate_report,
)
from t1moco.optim import joint_fit
from t1moco.phantom import PhantomConfig, generate_phantom

from conftest import series_from


def f32_series(rng, n=4, h=6, w=6):
    # float32-representable values make save/load round trips bit-exact
    frames = rng.random((n, h, w)).astype("<f4").astype(np.float64)
    return series_from(frames)


class TestSeriesRoundTrip:
    def test_round_trip_bit_identical(self, tmp_path, rng):
        series = f32_series(rng)
        save_series(series, tmp_path / "s", checksums=True)
        loaded = load_series(tmp_path / "s")
        np.testing.assert_array_equal(loaded.frames, series.frames)
        np.testing.assert_array_equal(loaded.timestamps, series.timestamps)
        assert loaded.spacing == series.spacing

    def test_missing_frame_file(self, tmp_path, rng):
        series = f32_series(rng)
        save_series(series, tmp_path / "s")
        manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
        manifest["n_frames"] = 5
        manifest["frames"].append("frame_004.raw")
        (tmp_path / "s" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(MissingFrameError):
            load_series(tmp_path / "s")

    def test_listed_count_mismatch(self, tmp_path, rng):
        series = f32_series(rng)
        save_series(series, tmp_path / "s")
        manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
        manifest["frames"] = manifest["frames"][:-1]
        (tmp_path / "s" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(MissingFrameError):
            load_series(tmp_path / "s")

    def test_wrong_byte_length(self, tmp_path, rng):
        series = f32_series(rng)
        save_series(series, tmp_path / "s")
        raw = (tmp_path / "s" / "frame_000.raw").read_bytes()
        (tmp_path / "s" / "frame_000.raw").write_bytes(raw[:-4])
        with pytest.raises(SizeMismatchError):
            load_series(tmp_path / "s")

    def test_checksum_failure(self, tmp_path, rng):
        series = f32_series(rng)
        save_series(series, tmp_path / "s", checksums=True)
        raw = bytearray((tmp_path / "s" / "frame_000.raw").read_bytes())
        raw[0] ^= 0xFF
        (tmp_path / "s" / "frame_000.raw").write_bytes(bytes(raw))
        with pytest.raises(ChecksumError):
            load_series(tmp_path / "s")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{nope")
        with pytest.raises(ParseError):
            load_series(tmp_path / "manifest.json")

    def test_normalize_on_load(self, tmp_path, rng):
        frames = (10.0 + 5.0 * rng.random((4, 6, 6))).astype("<f4").astype(np.float64)
        series = series_from(frames)
        save_series(series, tmp_path / "s", normalize_on_load=True)
        loaded = load_series(tmp_path / "s")
        assert loaded.frames.min() == 0.0
        assert loaded.frames.max() == 1.0


class TestOtherRoundTrips:
    def test_maps(self, tmp_path, rng):
        maps = ParametricMaps(
            (1000 * rng.random((6, 6))).astype("<f4").astype(np.float64),
            rng.random((6, 6)).astype("<f4").astype(np.float64),
        )
        save_maps(maps, tmp_path / "m", checksums=True)
        loaded = load_maps(tmp_path / "m")
        np.testing.assert_array_equal(loaded.t1, maps.t1)
        np.testing.assert_array_equal(loaded.m0, maps.m0)

    def test_fields(self, tmp_path, rng):
        fields = VelocityFieldSet(
            rng.standard_normal((3, 6, 6, 2)).astype("<f4").astype(np.float64), reference_index=1
        )
        save_fields(fields, tmp_path / "f")
        loaded = load_fields(tmp_path / "f")
        np.testing.assert_array_equal(loaded.fields, fields.fields)
        assert loaded.reference_index == 1

    def test_masks(self, tmp_path, rng):
        masks = MaskSet((rng.random((4, 6, 6)) > 0.5).astype(np.uint8))
        save_masks(masks, tmp_path / "k")
        loaded = load_masks(tmp_path / "k")
        np.testing.assert_array_equal(loaded.masks, masks.masks)

    def test_phantom_scene(self, tmp_path):
        scene = generate_phantom(PhantomConfig(height=64, width=64, n_frames=4), seed=5)
        save_phantom_scene(scene, tmp_path / "scene")
        loaded = load_phantom_scene(tmp_path / "scene")
        assert loaded.seed == 5
        assert loaded.config == scene.config
        np.testing.assert_allclose(loaded.series.frames, scene.series.frames, atol=1e-7)
        np.testing.assert_array_equal(loaded.truth_masks.masks, scene.truth_masks.masks)

    def test_solution(self, tmp_path):
        scene = generate_phantom(
            PhantomConfig(height=64, width=64, n_frames=4, snr=0.0), seed=6
        )
        solution = joint_fit(scene.series, FitConfig(outer_iterations=2))
        save_solution(solution, tmp_path / "sol")
        loaded = load_solution(tmp_path / "sol")
        assert loaded.converged == solution.converged
        assert loaded.config == solution.config
        assert [b.total for b in loaded.trace] == [b.total for b in solution.trace]
        np.testing.assert_allclose(loaded.maps.t1, solution.maps.t1, atol=1e-3)


class TestConfigFile:
    def test_parse_and_build(self, tmp_path):
        text = """
# tuning for a quick run
lambda_smooth = 250
outer_iterations = 5
magnitude_mode = false
step_size = 0.5
"""
        p = tmp_path / "run.cfg"
        p.write_text(text)
        kwargs = parse_config_file(p)
        cfg = FitConfig(**kwargs)
        assert cfg.lambda_smooth == 250.0
        assert cfg.outer_iterations == 5
        assert cfg.magnitude_mode is False
        assert cfg.step_size == 0.5

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("learning_rate = 0.1\n")
        with pytest.raises(ParseError):
            parse_config_file(p)

    def test_bad_value(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("outer_iterations = soon\n")
        with pytest.raises(ParseError):
            parse_config_file(p)

    def test_missing_equals(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("just a line\n")
        with pytest.raises(ParseError):
            parse_config_file(p)


class TestReports:
    def test_validate_rejects_missing_field(self):
        with pytest.raises(ParseError):
            validate_report({"schema_version": 1, "kind": "eval_report"}, "eval_report")

    def test_validate_rejects_wrong_type(self):
        report = {
            "schema_version": 1,
            "kind": "eval_report",
            "r2_mean": "high",
            "r2_std": 0.0,
            "dice_mean": 1.0,
            "hausdorff_mm": 0.0,
            "frames": [],
        }
        with pytest.raises(ParseError):
            validate_report(report, "eval_report")


class TestPngExport:
    def test_constant_map_renders_mid_colormap(self, tmp_path):
        from PIL import Image

        maps = ParametricMaps(np.full((8, 8), 1000.0), np.ones((8, 8)))
        out = tmp_path / "map.png"
        export_t1_png(maps, (0.0, 2000.0), out)
        img = np.asarray(Image.open(out))
        assert img.shape == (8, 8, 3)
        expected = t1_colormap()[128]
        assert np.all(img == expected)

    def test_range_max_hits_last_entry(self, tmp_path):
        from PIL import Image

        maps = ParametricMaps(np.full((4, 4), 2000.0), np.ones((4, 4)))
        out = tmp_path / "map.png"
        export_t1_png(maps, (0.0, 2000.0), out)
        img = np.asarray(Image.open(out))
        assert np.all(img == t1_colormap()[255])

    def test_sentinel_renders_black(self, tmp_path):
        from PIL import Image

        t1 = np.full((4, 4), 1500.0)
        t1[0, 0] = 0.0
        maps = ParametricMaps(t1, np.ones((4, 4)))
        out = tmp_path / "map.png"
        export_t1_png(maps, (0.0, 2000.0), out)
        img = np.asarray(Image.open(out))
        assert tuple(img[0, 0]) == (0, 0, 0)

    def test_deterministic_bytes(self, tmp_path, rng):
        maps = ParametricMaps(2000 * rng.random((16, 16)), np.ones((16, 16)))
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        export_t1_png(maps, (0.0, 2000.0), a)
        export_t1_png(maps, (0.0, 2000.0), b)
        assert a.read_bytes() == b.read_bytes()

    def test_invalid_range(self, tmp_path):
        maps = ParametricMaps(np.ones((4, 4)), np.ones((4, 4)))
        with pytest.raises(ValueError):
            export_t1_png(maps, (100.0, 100.0), tmp_path / "x.png")
