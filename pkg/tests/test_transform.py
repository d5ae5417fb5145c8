"""Tests for warping, upsampling and Jacobian statistics."""

import itertools
from collections.abc import Callable

import numpy as np
import pytest
from scipy import ndimage

from regx.exceptions import ConfigError, ShapeMismatchError
from regx.transform import (
    Interpolation,
    folding_fraction,
    jacobian_determinant,
    sdlogj,
    upsample,
    warp,
)
from regx.volume import DisplacementField, LabelVolume, Volume3D


def field_from(fn: Callable[[np.ndarray], np.ndarray], dims: tuple[int, int, int]) -> DisplacementField:
    grid = np.indices(dims, dtype=np.float64)
    return DisplacementField(fn(grid))


def smooth_random_field(rng: np.random.Generator, dims: tuple[int, int, int]) -> DisplacementField:
    vectors = np.stack([ndimage.gaussian_filter(rng.standard_normal(dims), 2.0) for _ in range(3)])
    return DisplacementField(vectors * 2.0)


def determinant_oracle(u: np.ndarray) -> np.ndarray:
    """Interior ``det(I + grad u)`` from explicit central differences."""
    _, nx, ny, nz = u.shape
    out = np.zeros((nx - 2, ny - 2, nz - 2))
    for x, y, z in itertools.product(range(1, nx - 1), range(1, ny - 1), range(1, nz - 1)):
        jac = np.eye(3)
        for i in range(3):
            jac[i, 0] += (u[i, x + 1, y, z] - u[i, x - 1, y, z]) / 2
            jac[i, 1] += (u[i, x, y + 1, z] - u[i, x, y - 1, z]) / 2
            jac[i, 2] += (u[i, x, y, z + 1] - u[i, x, y, z - 1]) / 2
        out[x - 1, y - 1, z - 1] = np.linalg.det(jac)
    return out


class TestWarp:
    """Resampling a volume at x + u(x)."""

    def test_zero_field_is_identity(self, textured: Callable[..., Volume3D]):
        vol = textured((7, 6, 5))
        out = warp(vol, DisplacementField.zeros(vol.dims))
        np.testing.assert_allclose(out.data, vol.data, atol=1e-6)

    def test_zero_field_on_labels_is_exact(self, rng: np.random.Generator):
        labels = LabelVolume(rng.integers(0, 4, (6, 6, 6)).astype(np.uint8))
        out = warp(labels, DisplacementField.zeros(labels.dims))
        assert isinstance(out, LabelVolume)
        np.testing.assert_array_equal(out.data, labels.data)
        assert out.num_classes == labels.num_classes

    def test_integer_translation(self, textured: Callable[..., Volume3D]):
        vol = textured((8, 8, 8))
        t = (1, 0, -2)
        field = DisplacementField(np.broadcast_to(np.array(t, dtype=float).reshape(3, 1, 1, 1), (3, 8, 8, 8)))
        out = warp(vol, field)
        np.testing.assert_allclose(out.data[0:7, :, 2:8], vol.data[1:8, :, 0:6], atol=1e-4)

    def test_half_voxel_on_ramp(self, ramp: Callable[..., Volume3D]):
        vol = ramp((6, 4, 4))
        field = field_from(lambda g: np.stack([np.full(g.shape[1:], 0.5), 0 * g[1], 0 * g[2]]), vol.dims)
        out = warp(vol, field, Interpolation.LINEAR)
        np.testing.assert_allclose(out.data[:5], vol.data[:5] + 0.5, atol=1e-6)
        np.testing.assert_allclose(out.data[5], 5.0, atol=1e-6)

    def test_nearest_on_intensities(self, ramp: Callable[..., Volume3D]):
        vol = ramp((6, 4, 4))
        field = field_from(lambda g: np.stack([np.full(g.shape[1:], 0.7), 0 * g[1], 0 * g[2]]), vol.dims)
        out = warp(vol, field, Interpolation.NEAREST)
        np.testing.assert_array_equal(out.data[:4], vol.data[1:5])

    def test_linear_on_labels_rejected(self):
        labels = LabelVolume(np.zeros((3, 3, 3), dtype=np.uint8))
        with pytest.raises(ConfigError):
            warp(labels, DisplacementField.zeros(labels.dims), Interpolation.LINEAR)

    def test_coarse_field_rejected(self):
        vol = Volume3D(np.zeros((8, 8, 8)))
        with pytest.raises(ShapeMismatchError):
            warp(vol, DisplacementField.zeros((4, 4, 4), stride=2))

    def test_dims_mismatch(self):
        vol = Volume3D(np.zeros((8, 8, 8)))
        with pytest.raises(ShapeMismatchError):
            warp(vol, DisplacementField.zeros((8, 8, 7)))


class TestInterpolation:
    """Interpolation scheme selection."""

    def test_parse(self):
        assert Interpolation.parse("Nearest") is Interpolation.NEAREST
        assert Interpolation.parse(" linear ") is Interpolation.LINEAR
        assert Interpolation.parse(Interpolation.LINEAR) is Interpolation.LINEAR
        assert Interpolation.NEAREST.label == "nearest"

    def test_parse_unknown(self):
        with pytest.raises(ConfigError):
            Interpolation.parse("cubic")

    def test_analyze(self):
        assert Interpolation.analyze(LabelVolume(np.zeros((2, 2, 2), dtype=np.uint8))) is Interpolation.NEAREST
        assert Interpolation.analyze(Volume3D(np.zeros((2, 2, 2)))) is Interpolation.LINEAR


class TestUpsample:
    """Coarse to full-resolution fields."""

    def test_full_resolution_passthrough(self):
        field = DisplacementField.zeros((5, 5, 5))
        assert upsample(field, (5, 5, 5)) is field

    def test_full_resolution_wrong_dims(self):
        with pytest.raises(ShapeMismatchError):
            upsample(DisplacementField.zeros((5, 5, 5)), (6, 5, 5))

    def test_coarse_constant(self):
        vectors = np.broadcast_to(np.array([2.0, 0.0, -1.0]).reshape(3, 1, 1, 1), (3, 4, 4, 4))
        field = upsample(DisplacementField(vectors, stride=2), (8, 8, 8))
        assert field.grid_dims == (8, 8, 8)
        np.testing.assert_allclose(field.vectors[0], 2.0, atol=1e-6)
        np.testing.assert_allclose(field.vectors[2], -1.0, atol=1e-6)


class TestJacobian:
    """Determinant of the deformation gradient and its statistics."""

    def test_zero_field(self):
        field = DisplacementField.zeros((5, 5, 5))
        np.testing.assert_array_equal(jacobian_determinant(field).data, 1.0)
        assert sdlogj(field) == 0.0
        assert folding_fraction(field) == 0.0

    def test_linear_stretch(self):
        field = field_from(lambda g: np.stack([0.3 * g[0], 0 * g[1], 0 * g[2]]), (6, 5, 4))
        np.testing.assert_allclose(jacobian_determinant(field).data, 1.3, atol=1e-6)

    def test_uniform_scaling(self):
        alpha = 0.1
        field = field_from(lambda g: alpha * g, (7, 7, 7))
        det = jacobian_determinant(field).data
        assert float(det.mean()) == pytest.approx((1 + alpha) ** 3, abs=1e-5)
        assert sdlogj(field) == pytest.approx(0.0, abs=1e-6)

    def test_affine_field_has_zero_sdlogj(self, rng: np.random.Generator):
        matrix = rng.uniform(-0.2, 0.2, (3, 3))
        offset = rng.uniform(-1, 1, 3)
        field = field_from(
            lambda g: np.einsum("ij,jxyz->ixyz", matrix, g) + offset.reshape(3, 1, 1, 1), (8, 8, 8)
        )
        assert sdlogj(field) == pytest.approx(0.0, abs=1e-6)

    def test_random_field_matches_oracle(self, rng: np.random.Generator):
        field = smooth_random_field(rng, (9, 8, 7))
        oracle = determinant_oracle(field.vectors.astype(np.float64))
        det = jacobian_determinant(field).data[1:-1, 1:-1, 1:-1]
        np.testing.assert_allclose(det, oracle, atol=1e-5)

        expected = float(np.std(np.log(np.clip(oracle, 1e-6, 1e6))))
        assert sdlogj(field) == pytest.approx(expected, abs=1e-5)
        assert folding_fraction(field) == pytest.approx(float(np.mean(oracle <= 0)))

    def test_physical_units_give_same_determinant(self, rng: np.random.Generator):
        vectors = smooth_random_field(rng, (8, 8, 8)).vectors
        plain = DisplacementField(vectors, spacing=(1.0, 1.0, 1.0))
        spaced = DisplacementField(vectors, spacing=(1.75, 1.25, 1.75))
        np.testing.assert_allclose(
            jacobian_determinant(spaced, physical=True).data,
            jacobian_determinant(plain).data,
            atol=1e-5,
        )

    def test_folding(self):
        field = field_from(lambda g: np.stack([-2.0 * g[0], 0 * g[1], 0 * g[2]]), (5, 5, 5))
        assert folding_fraction(field) == 1.0
        assert sdlogj(field) == pytest.approx(0.0, abs=1e-12)

    def test_field_too_small(self):
        with pytest.raises(ShapeMismatchError):
            sdlogj(DisplacementField.zeros((2, 5, 5)))

    def test_coarse_field_rejected(self):
        with pytest.raises(ShapeMismatchError):
            jacobian_determinant(DisplacementField.zeros((4, 4, 4), stride=2))
