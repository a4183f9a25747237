from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from t1moco.deformation import (
    DisplacementField,
    compose,
    integrate_velocity,
    jacobian_determinant,
    warp,
)
from t1moco.errors import InvalidConfigError, NonFiniteValueError, ShapeMismatchError


def smooth_field(rng, size, amplitude, sigma=None):
    sigma = sigma or size / 6.0
    v = gaussian_filter(rng.standard_normal((size, size, 2)), (sigma, sigma, 0))
    peak = np.abs(v).max()
    return v * (amplitude / peak)


class TestIntegrateVelocity:
    def test_zero_velocity_is_identity(self):
        u = integrate_velocity(np.zeros((16, 16, 2)), 7)
        assert np.all(u.u == 0.0)

    def test_constant_flow_is_translation(self):
        v = np.zeros((48, 48, 2))
        v[..., 1] = 3.0
        u = integrate_velocity(v, 7).u
        assert np.abs(u - v).max() < 1e-3

    def test_step_count_convergence(self, rng):
        v = smooth_field(rng, 96, 3.0, sigma=16.0)
        u7 = integrate_velocity(v, 7).u
        u10 = integrate_velocity(v, 10).u
        assert np.abs(u7 - u10).max() < 1e-3

    def test_negated_velocity_inverts(self, rng):
        v = smooth_field(rng, 96, 3.0, sigma=16.0)
        forward = integrate_velocity(v, 7)
        backward = integrate_velocity(-v, 7)
        assert np.abs(compose(forward, backward).u).max() < 0.05
        assert np.abs(compose(backward, forward).u).max() < 0.05

    def test_rejects_bad_steps(self):
        with pytest.raises(InvalidConfigError):
            integrate_velocity(np.zeros((8, 8, 2)), 0)


class TestCompose:
    def test_zero_left_identity(self, rng):
        b = smooth_field(rng, 32, 2.0)
        assert np.array_equal(compose(np.zeros_like(b), b).u, b)

    def test_zero_right_identity(self, rng):
        a = smooth_field(rng, 32, 2.0)
        assert np.array_equal(compose(a, np.zeros_like(a)).u, a)

    def test_integer_translations_sum_on_interior(self):
        a = np.zeros((32, 32, 2))
        a[..., 0] = 2.0
        b = np.zeros((32, 32, 2))
        b[..., 1] = 3.0
        c = compose(a, b).u
        interior = c[4:-6, 4:-6]
        np.testing.assert_allclose(interior[..., 0], 2.0)
        np.testing.assert_allclose(interior[..., 1], 3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            compose(np.zeros((8, 8, 2)), np.zeros((9, 8, 2)))


class TestWarp:
    def test_identity_is_bit_exact(self, rng):
        img = rng.random((24, 24))
        out = warp(img, np.zeros((24, 24, 2)))
        assert np.array_equal(out, img)

    def test_integer_column_shift(self, rng):
        img = rng.random((16, 16))
        u = np.zeros((16, 16, 2))
        u[..., 1] = 1.0
        out = warp(img, u)
        np.testing.assert_array_equal(out[:, :-1], img[:, 1:])
        np.testing.assert_array_equal(out[:, -1], img[:, -1])

    def test_constant_image_invariant(self, rng):
        img = np.full((20, 20), 0.37)
        u = smooth_field(rng, 20, 2.5)
        np.testing.assert_allclose(warp(img, u), 0.37, rtol=0, atol=1e-15)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_bounds_preserved(self, seed):
        # bilinear output is a convex combination of input samples
        r = np.random.default_rng(seed)
        img = r.normal(size=(12, 12))
        u = r.normal(scale=3.0, size=(12, 12, 2))
        out = warp(img, u)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12

    def test_accepts_displacement_field(self, rng):
        img = rng.random((10, 10))
        u = DisplacementField(np.zeros((10, 10, 2)))
        assert np.array_equal(warp(img, u), img)


class TestJacobianDeterminant:
    def test_identity_map(self):
        np.testing.assert_array_equal(jacobian_determinant(np.zeros((8, 8, 2))), np.ones((8, 8)))

    def test_uniform_translation(self):
        u = np.zeros((8, 8, 2))
        u[..., 0] = 4.0
        u[..., 1] = -2.5
        np.testing.assert_array_equal(jacobian_determinant(u), np.ones((8, 8)))

    def test_linear_scaling_field(self):
        h = w = 24
        rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
        u = np.stack([0.1 * rr, 0.1 * cc], axis=-1)
        det = jacobian_determinant(u)
        np.testing.assert_allclose(det[1:-1, 1:-1], 1.21, rtol=1e-12)

    def test_positive_for_integrated_smooth_fields(self, rng):
        for _ in range(5):
            v = smooth_field(rng, 64, 3.0)
            det = jacobian_determinant(integrate_velocity(v, 7))
            assert (det[1:-1, 1:-1] > 0).mean() >= 0.995


class TestDisplacementField:
    def test_rejects_non_finite(self):
        u = np.zeros((8, 8, 2))
        u[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteValueError):
            DisplacementField(u)

    def test_rejects_bad_shape(self):
        with pytest.raises(ShapeMismatchError):
            DisplacementField(np.zeros((8, 8, 3)))
