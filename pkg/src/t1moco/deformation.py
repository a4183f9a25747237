"""Stationary velocity fields: integration, warping and diagnostics.

Deformations follow the backward-warping convention: a displacement u maps
output-voxel coordinates to input sampling locations, output(p) =
image(p + u(p)), sampled bilinearly with clamp-to-edge boundary handling.
Velocity fields are integrated to displacements by scaling-and-squaring,
u <- v / 2^steps followed by ``steps`` self-compositions, which
approximates the exponential map of v and keeps deformations
diffeomorphic for smooth inputs.

The private ``*_tape``/``*_vjp`` functions implement reverse-mode
differentiation through sampling and integration; :mod:`t1moco.losses`
builds its analytic gradients on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, NonFiniteValueError, ShapeMismatchError

_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


@dataclass(frozen=True)
class DisplacementField:
    """(H, W, 2) displacements in voxel units, (row, col) components."""

    u: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, copy=True)
        if u.ndim != 3 or u.shape[-1] != 2:
            raise ShapeMismatchError(f"displacement must be (H, W, 2), got {u.shape}")
        if not np.isfinite(u).all():
            raise NonFiniteValueError("displacement components must be finite")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape[0], self.u.shape[1]


def _as_field(u) -> np.ndarray:
    return u.u if isinstance(u, DisplacementField) else np.asarray(u, dtype=np.float64)


def identity_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Cached read-only (rows, cols) coordinate grids."""
    key = (h, w)
    if key not in _GRID_CACHE:
        rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        rr.setflags(write=False)
        cc.setflags(write=False)
        _GRID_CACHE[key] = (rr, cc)
    return _GRID_CACHE[key]


def _bilinear_parts(h: int, w: int, rows: np.ndarray, cols: np.ndarray):
    """Corner indices, fractional offsets and saturation masks for queries."""
    r = np.clip(rows, 0.0, h - 1.0)
    c = np.clip(cols, 0.0, w - 1.0)
    r0 = np.minimum(np.floor(r), h - 2.0)
    c0 = np.minimum(np.floor(c), w - 2.0)
    fr = r - r0
    fc = c - c0
    r0i = r0.astype(np.intp)
    c0i = c0.astype(np.intp)
    in_r = (rows > 0.0) & (rows < h - 1.0)
    in_c = (cols > 0.0) & (cols < w - 1.0)
    return r0i, c0i, fr, fc, in_r, in_c


def _gather(img: np.ndarray, parts) -> np.ndarray:
    """Bilinear sample of (H, W) or (H, W, C) ``img`` at tabulated queries."""
    r0, c0, fr, fc, _, _ = parts
    if img.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    i00 = img[r0, c0]
    i10 = img[r0 + 1, c0]
    i01 = img[r0, c0 + 1]
    i11 = img[r0 + 1, c0 + 1]
    return (
        i00 * (1.0 - fr) * (1.0 - fc)
        + i10 * fr * (1.0 - fc)
        + i01 * (1.0 - fr) * fc
        + i11 * fr * fc
    )


def _gather_coord_grad(img: np.ndarray, parts):
    """d(sample)/d(row), d(sample)/d(col); zero where the query is saturated."""
    r0, c0, fr, fc, in_r, in_c = parts
    if img.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
        in_r = in_r[..., None]
        in_c = in_c[..., None]
    i00 = img[r0, c0]
    i10 = img[r0 + 1, c0]
    i01 = img[r0, c0 + 1]
    i11 = img[r0 + 1, c0 + 1]
    d_row = ((i10 - i00) * (1.0 - fc) + (i11 - i01) * fc) * in_r
    d_col = ((i01 - i00) * (1.0 - fr) + (i11 - i10) * fr) * in_c
    return d_row, d_col


def _scatter_to_grid(cot: np.ndarray, parts, h: int, w: int) -> np.ndarray:
    """Adjoint of :func:`_gather` with respect to the sampled image.

    cot: (H, W) cotangent at the query positions. Returns (H, W).
    """
    r0, c0, fr, fc, _, _ = parts
    flat = np.zeros(h * w)
    base = r0 * w + c0
    np_b = h * w
    flat += np.bincount(base.ravel(), weights=(cot * (1.0 - fr) * (1.0 - fc)).ravel(), minlength=np_b)
    flat += np.bincount((base + w).ravel(), weights=(cot * fr * (1.0 - fc)).ravel(), minlength=np_b)
    flat += np.bincount((base + 1).ravel(), weights=(cot * (1.0 - fr) * fc).ravel(), minlength=np_b)
    flat += np.bincount((base + w + 1).ravel(), weights=(cot * fr * fc).ravel(), minlength=np_b)
    return flat.reshape(h, w)


def warp(image: np.ndarray, u) -> np.ndarray:
    """Backward-warp ``image`` by displacement ``u``: out(p) = image(p + u(p))."""
    u = _as_field(u)
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if u.shape[:2] != (h, w):
        raise ShapeMismatchError(f"image {image.shape} vs displacement {u.shape}")
    rr, cc = identity_grid(h, w)
    parts = _bilinear_parts(h, w, rr + u[..., 0], cc + u[..., 1])
    return _gather(image, parts)


def warp_with_tape(image: np.ndarray, u: np.ndarray):
    """Warp plus the pieces needed for d(warped)/d(u)."""
    h, w = image.shape[:2]
    rr, cc = identity_grid(h, w)
    parts = _bilinear_parts(h, w, rr + u[..., 0], cc + u[..., 1])
    return _gather(image, parts), parts


def warp_vjp(image: np.ndarray, parts, cot: np.ndarray) -> np.ndarray:
    """Cotangent of warp(image, u) with respect to u; image held fixed.

    cot: (H, W). Returns (H, W, 2).
    """
    d_row, d_col = _gather_coord_grad(image, parts)
    return np.stack((cot * d_row, cot * d_col), axis=-1)


def compose(a, b) -> DisplacementField:
    """Composition (a o b)(p) = b(p) + a(p + b(p)), sampling ``a`` bilinearly."""
    a = _as_field(a)
    b = _as_field(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cannot compose {a.shape} with {b.shape}")
    h, w = a.shape[:2]
    rr, cc = identity_grid(h, w)
    parts = _bilinear_parts(h, w, rr + b[..., 0], cc + b[..., 1])
    return DisplacementField(b + _gather(a, parts))


def _square_with_tape(u: np.ndarray):
    """One scaling-and-squaring step u' = u + u(p + u(p)), with tape."""
    h, w = u.shape[:2]
    rr, cc = identity_grid(h, w)
    parts = _bilinear_parts(h, w, rr + u[..., 0], cc + u[..., 1])
    return u + _gather(u, parts), parts


def _square_vjp(u: np.ndarray, parts, cot: np.ndarray) -> np.ndarray:
    """Reverse-mode step through u' = u + gather(u, p + u(p)).

    cot: (H, W, 2) cotangent of u'. Returns the cotangent of u.
    """
    h, w = u.shape[:2]
    ubar = cot.copy()
    # Query-point dependency: gather moves with u at p.
    d_row, d_col = _gather_coord_grad(u, parts)  # (H, W, 2) each
    ubar[..., 0] += (cot * d_row).sum(axis=-1)
    ubar[..., 1] += (cot * d_col).sum(axis=-1)
    # Source-field dependency: gather reads u at the corner voxels.
    for comp in range(2):
        ubar[..., comp] += _scatter_to_grid(cot[..., comp], parts, h, w)
    return ubar


def integrate_velocity(v, steps: int = 7) -> DisplacementField:
    """Exponentiate a stationary velocity field by scaling-and-squaring."""
    if steps < 1:
        raise InvalidConfigError("steps must be >= 1")
    u = _as_field(v) / float(2**steps)
    for _ in range(steps):
        u, _ = _square_with_tape(u)
    return DisplacementField(u)


def integrate_velocity_with_tape(v: np.ndarray, steps: int):
    """Integration that records intermediate fields for reverse mode.

    Returns (u_final, tape) where tape is a list of (u_k, parts_k).
    """
    u = v / float(2**steps)
    tape = []
    for _ in range(steps):
        nxt, parts = _square_with_tape(u)
        tape.append((u, parts))
        u = nxt
    return u, tape


def integrate_velocity_vjp(tape, cot: np.ndarray, steps: int) -> np.ndarray:
    """Pull a cotangent on the integrated displacement back to the velocity."""
    for u_k, parts_k in reversed(tape):
        cot = _square_vjp(u_k, parts_k, cot)
    return cot / float(2**steps)


def jacobian_determinant(u) -> np.ndarray:
    """det(I + grad u): central differences inside, one-sided at the edges.

    Values near 1 indicate volume preservation; positivity everywhere is
    the discrete diffeomorphism check.
    """
    u = _as_field(u)
    if u.shape[0] < 3 or u.shape[1] < 3:
        raise ShapeMismatchError("need at least 3x3 fields for the Jacobian stencil")
    du_r = np.gradient(u[..., 0], axis=0)
    du_c = np.gradient(u[..., 0], axis=1)
    dv_r = np.gradient(u[..., 1], axis=0)
    dv_c = np.gradient(u[..., 1], axis=1)
    return (1.0 + du_r) * (1.0 + dv_c) - du_c * dv_r
