"""On-disk formats: raw float32 frames with JSON manifests, PNG rendering.

Every numeric payload is little-endian IEEE-754 32-bit float, row-major.
Vector fields interleave their two components fastest, i.e. an (H, W, 2)
array's natural row-major order. Manifests are JSON with sorted keys so
identical inputs produce byte-identical trees. Optional sha256 checksums
are verified when present.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .containers import FitConfig, ImageSeries, MaskSet, ParametricMaps, VelocityFieldSet, min_max_normalize
from .errors import ChecksumError, MissingFrameError, ParseError, SizeMismatchError
from .losses import LossBreakdown
from .metrics import EvalReport
from .optim import JointSolution
from .phantom import PhantomConfig, PhantomScene

SCHEMA_VERSION = 1
_SCHEMA_DIR = Path(__file__).parent / "schemas"

# Fixed T1 colormap: linear ramps between these (position, RGB) anchors,
# dark-to-light so higher T1 reads brighter; sentinel voxels render black.
T1_COLORMAP_ANCHORS = (
    (0.00, (0, 0, 4)),
    (0.25, (81, 18, 124)),
    (0.50, (183, 55, 121)),
    (0.75, (252, 137, 97)),
    (1.00, (252, 253, 191)),
)


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingFrameError(f"missing file: {path}")
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON ({e})")


def write_raw(path: Path, arr: np.ndarray) -> None:
    """Write ``arr`` as little-endian float32, row-major."""
    Path(path).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raw(path: Path, count: int) -> np.ndarray:
    """Read exactly ``count`` little-endian float32 values as float64."""
    path = Path(path)
    if not path.exists():
        raise MissingFrameError(f"missing file: {path}")
    data = path.read_bytes()
    if len(data) != 4 * count:
        raise SizeMismatchError(f"{path}: expected {4 * count} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").astype(np.float64)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _verify_checksums(manifest: dict, base: Path) -> None:
    for name, digest in manifest.get("checksums", {}).items():
        actual = _sha256(base / name)
        if actual != digest:
            raise ChecksumError(f"{base / name}: checksum mismatch")


# ---------------------------------------------------------------- series

def save_series(series: ImageSeries, out_dir, normalize_on_load: bool = False,
                checksums: bool = False) -> Path:
    """Write a series directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = series.shape
    names = []
    for i in range(series.n_frames):
        name = f"frame_{i:03d}.raw"
        write_raw(out / name, series.frames[i])
        names.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "series",
        "height": h,
        "width": w,
        "n_frames": series.n_frames,
        "timestamps_ms": [float(t) for t in series.timestamps],
        "spacing_mm": [series.spacing[0], series.spacing[1]],
        "endianness": "little",
        "normalize_on_load": bool(normalize_on_load),
        "frames": names,
    }
    if checksums:
        manifest["checksums"] = {n: _sha256(out / n) for n in names}
    _dump_json(manifest, out / "manifest.json")
    return out / "manifest.json"


def load_series(path) -> ImageSeries:
    """Load a series from a manifest path or its directory."""
    p = Path(path)
    manifest_path = p / "manifest.json" if p.is_dir() else p
    m = _load_json(manifest_path)
    base = manifest_path.parent
    for key in ("height", "width", "n_frames", "timestamps_ms", "frames", "spacing_mm"):
        if key not in m:
            raise ParseError(f"{manifest_path}: missing key '{key}' (series schema v{SCHEMA_VERSION})")
    if m.get("endianness", "little") != "little":
        raise ParseError(f"{manifest_path}: unsupported endianness {m['endianness']!r}")
    if len(m["frames"]) != m["n_frames"]:
        raise MissingFrameError(
            f"{manifest_path}: n_frames={m['n_frames']} but {len(m['frames'])} files listed"
        )
    _verify_checksums(m, base)
    h, w = int(m["height"]), int(m["width"])
    frames = np.stack([read_raw(base / name, h * w).reshape(h, w) for name in m["frames"]])
    series = ImageSeries(frames, np.asarray(m["timestamps_ms"], dtype=np.float64), tuple(m["spacing_mm"]))
    if m.get("normalize_on_load", False):
        series = min_max_normalize(series)
    return series


# ---------------------------------------------------------------- masks

def save_masks(masks: MaskSet, out_dir, checksums: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = masks.shape
    names = []
    for i in range(masks.n_frames):
        name = f"mask_{i:03d}.raw"
        write_raw(out / name, masks.masks[i].astype(np.float64))
        names.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "masks",
        "height": h,
        "width": w,
        "n_frames": masks.n_frames,
        "endianness": "little",
        "masks": names,
    }
    if checksums:
        manifest["checksums"] = {n: _sha256(out / n) for n in names}
    _dump_json(manifest, out / "masks.json")
    return out / "masks.json"


def load_masks(path) -> MaskSet:
    p = Path(path)
    manifest_path = p / "masks.json" if p.is_dir() else p
    m = _load_json(manifest_path)
    base = manifest_path.parent
    _verify_checksums(m, base)
    h, w = int(m["height"]), int(m["width"])
    stack = np.stack([read_raw(base / name, h * w).reshape(h, w) for name in m["masks"]])
    return MaskSet((stack >= 0.5).astype(np.uint8))


# ---------------------------------------------------------------- fields

def save_fields(fields: VelocityFieldSet, out_dir, checksums: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = fields.shape
    names = []
    for k in range(fields.fields.shape[0]):
        name = f"field_{k:03d}.raw"
        write_raw(out / name, fields.fields[k])
        names.append(name)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fields",
        "height": h,
        "width": w,
        "n_fields": len(names),
        "reference_index": fields.reference_index,
        "endianness": "little",
        "components": 2,
        "fields": names,
    }
    if checksums:
        manifest["checksums"] = {n: _sha256(out / n) for n in names}
    _dump_json(manifest, out / "fields.json")
    return out / "fields.json"


def load_fields(path) -> VelocityFieldSet:
    p = Path(path)
    manifest_path = p / "fields.json" if p.is_dir() else p
    m = _load_json(manifest_path)
    base = manifest_path.parent
    _verify_checksums(m, base)
    h, w = int(m["height"]), int(m["width"])
    stack = np.stack([read_raw(base / name, h * w * 2).reshape(h, w, 2) for name in m["fields"]])
    return VelocityFieldSet(stack, int(m["reference_index"]))


# ---------------------------------------------------------------- maps

def save_maps(maps: ParametricMaps, out_dir, checksums: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = maps.shape
    write_raw(out / "t1.raw", maps.t1)
    write_raw(out / "m0.raw", maps.m0)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "maps",
        "height": h,
        "width": w,
        "endianness": "little",
        "t1_file": "t1.raw",
        "m0_file": "m0.raw",
    }
    if checksums:
        manifest["checksums"] = {n: _sha256(out / n) for n in ("t1.raw", "m0.raw")}
    _dump_json(manifest, out / "maps.json")
    return out / "maps.json"


def load_maps(path) -> ParametricMaps:
    p = Path(path)
    manifest_path = p / "maps.json" if p.is_dir() else p
    m = _load_json(manifest_path)
    base = manifest_path.parent
    _verify_checksums(m, base)
    h, w = int(m["height"]), int(m["width"])
    t1 = read_raw(base / m["t1_file"], h * w).reshape(h, w)
    m0 = read_raw(base / m["m0_file"], h * w).reshape(h, w)
    return ParametricMaps(t1=t1, m0=m0)


# ---------------------------------------------------------------- scene

def save_phantom_scene(scene: PhantomScene, out_dir, checksums: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_series(scene.series, out / "series", checksums=checksums)
    save_masks(scene.truth_masks, out / "masks", checksums=checksums)
    save_fields(scene.truth_motion, out / "motion", checksums=checksums)
    save_maps(scene.truth_maps, out / "truth_maps", checksums=checksums)
    cfg = dataclasses.asdict(scene.config)
    if cfg["timestamps"] is not None:
        cfg["timestamps"] = [float(t) for t in cfg["timestamps"]]
    _dump_json(
        {"schema_version": SCHEMA_VERSION, "kind": "phantom_scene", "seed": scene.seed, "config": cfg},
        out / "scene.json",
    )
    return out / "scene.json"


def load_phantom_scene(path) -> PhantomScene:
    p = Path(path)
    meta = _load_json(p / "scene.json" if p.is_dir() else p)
    base = (p if p.is_dir() else p.parent)
    cfg = dict(meta["config"])
    if cfg.get("timestamps") is not None:
        cfg["timestamps"] = tuple(cfg["timestamps"])
    if cfg.get("spacing") is not None:
        cfg["spacing"] = tuple(cfg["spacing"])
    return PhantomScene(
        truth_maps=load_maps(base / "truth_maps"),
        truth_masks=load_masks(base / "masks"),
        truth_motion=load_fields(base / "motion"),
        series=load_series(base / "series"),
        seed=int(meta["seed"]),
        config=PhantomConfig(**cfg),
    )


# ---------------------------------------------------------------- solution

def save_solution(solution: JointSolution, out_dir, threads: int = 1, checksums: bool = False) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_maps(solution.maps, out / "maps", checksums=checksums)
    save_fields(solution.fields, out / "fields", checksums=checksums)
    save_series(solution.registered, out / "registered", checksums=checksums)
    save_series(solution.synthetic, out / "synthetic", checksums=checksums)
    _dump_json([b.as_dict() for b in solution.trace], out / "trace.json")
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit_report",
        "converged": solution.converged,
        "iterations": max(len(solution.trace) - 1, 0),
        "final_loss": solution.trace[-1].as_dict() if solution.trace else None,
        "config": dataclasses.asdict(solution.config),
        "threads": threads,
    }
    validate_report(report, "fit_report")
    _dump_json(report, out / "report.json")
    return out / "report.json"


def load_solution(path) -> JointSolution:
    base = Path(path)
    report = _load_json(base / "report.json")
    trace_raw = _load_json(base / "trace.json")
    trace = tuple(LossBreakdown(**entry) for entry in trace_raw)
    return JointSolution(
        maps=load_maps(base / "maps"),
        fields=load_fields(base / "fields"),
        registered=load_series(base / "registered"),
        synthetic=load_series(base / "synthetic"),
        trace=trace,
        converged=bool(report["converged"]),
        config=FitConfig(**report["config"]),
    )


# ---------------------------------------------------------------- reports

def validate_report(report: dict, kind: str) -> None:
    """Check ``report`` against the shipped structural schema for ``kind``."""
    schema = _load_json(_SCHEMA_DIR / f"{kind}_v{SCHEMA_VERSION}.json")
    type_map = {
        "number": (int, float),
        "string": str,
        "boolean": bool,
        "array": list,
        "object": dict,
    }
    for key, tname in schema["required"].items():
        if key not in report:
            raise ParseError(f"{kind} v{SCHEMA_VERSION}: missing required field '{key}'")
        if report[key] is not None and not isinstance(report[key], type_map[tname]):
            raise ParseError(f"{kind} v{SCHEMA_VERSION}: field '{key}' must be {tname}")
    for key, tname in schema.get("optional", {}).items():
        if key in report and report[key] is not None and not isinstance(report[key], type_map[tname]):
            raise ParseError(f"{kind} v{SCHEMA_VERSION}: field '{key}' must be {tname}")


def save_eval_report(report: EvalReport, path) -> None:
    payload = report.as_dict()
    payload["kind"] = "eval_report"
    validate_report(payload, "eval_report")
    _dump_json(payload, Path(path))


# ---------------------------------------------------------------- config files

_CONFIG_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def parse_config_file(path) -> dict:
    """Parse a plain ``key = value`` file into FitConfig keyword arguments."""
    valid = {f.name: f.type for f in dataclasses.fields(FitConfig)}
    out: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in valid:
            raise ParseError(f"{path}:{lineno}: unknown config key '{key}'")
        if key in ("outer_iterations", "integration_steps", "seed", "refit_interval",
                   "levels", "reference_index", "max_halvings"):
            try:
                out[key] = int(value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: '{key}' needs an integer, got {value!r}")
        elif key == "magnitude_mode":
            if value.lower() not in _CONFIG_BOOL:
                raise ParseError(f"{path}:{lineno}: '{key}' needs a boolean, got {value!r}")
            out[key] = _CONFIG_BOOL[value.lower()]
        else:
            try:
                out[key] = float(value)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: '{key}' needs a number, got {value!r}")
    return out


# ---------------------------------------------------------------- rendering

def t1_colormap() -> np.ndarray:
    """(256, 3) uint8 lookup table interpolated from the documented anchors."""
    lut = np.zeros((256, 3), dtype=np.uint8)
    xs = np.linspace(0.0, 1.0, 256)
    pos = np.array([p for p, _ in T1_COLORMAP_ANCHORS])
    rgb = np.array([c for _, c in T1_COLORMAP_ANCHORS], dtype=np.float64)
    for ch in range(3):
        lut[:, ch] = np.rint(np.interp(xs, pos, rgb[:, ch])).astype(np.uint8)
    return lut


def export_t1_png(maps: ParametricMaps, t1_range: tuple[float, float], path) -> None:
    """Render the T1 map to an 8-bit color PNG.

    Values are clamped to ``t1_range``; sentinel voxels (t1 <= 0) render
    black. Identical inputs produce identical bytes.
    """
    lo, hi = float(t1_range[0]), float(t1_range[1])
    if not lo < hi:
        raise ValueError(f"invalid range [{lo}, {hi}]")
    lut = t1_colormap()
    frac = np.clip((maps.t1 - lo) / (hi - lo), 0.0, 1.0)
    idx = np.rint(frac * 255.0).astype(np.intp)
    img = lut[idx]
    img[maps.t1 <= 0] = 0
    Image.fromarray(img, mode="RGB").save(Path(path), format="PNG")
