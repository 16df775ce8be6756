"""Grayscale conversion, correlation, and the SSIM index."""
import numpy as np
import pytest

from randconv.errors import DegenerateInputError, ParameterError, ShapeError
from randconv.metrics import GrayImage, pearson, ssim_reported, to_gray
from randconv.tensors import FeatureMaps


def _gray(rng, h=16, w=16):
    return GrayImage(rng.random((h, w)))


def test_to_gray_luma_weights():
    # a pure red / green / blue pixel maps to its luma weight
    data = np.zeros((3, 3))
    data[0, 0] = data[1, 1] = data[2, 2] = 1.0
    g = to_gray(FeatureMaps(data, 1, 3))
    np.testing.assert_allclose(g.values[0], [0.299, 0.587, 0.114], atol=1e-12)
    with pytest.raises(ShapeError):
        to_gray(FeatureMaps(np.zeros((2, 4)), 2, 2))


def test_gray_image_clamps_and_freezes():
    g = GrayImage([[1.5, -0.25], [0.5, 0.0]])
    np.testing.assert_array_equal(g.values, [[1.0, 0.0], [0.5, 0.0]])
    with pytest.raises(ValueError):
        g.values[0, 0] = 0.3
    with pytest.raises(ParameterError):
        GrayImage([[0.5]], dynamic_range=0.0)


def test_pearson_affine_invariance(rng):
    a = _gray(rng)
    b = GrayImage(np.clip(0.3 * a.values + 0.21, 0.0, 1.0))
    assert pearson(a, b) == pytest.approx(1.0, abs=1e-12)
    inv = GrayImage(1.0 - a.values)
    assert pearson(a, inv) == pytest.approx(-1.0, abs=1e-12)


def test_pearson_shuffle_decorrelates(rng):
    a = rng.random(40 * 40)
    b = a.copy()
    rng.shuffle(b)
    r = pearson(GrayImage(a.reshape(40, 40)), GrayImage(b.reshape(40, 40)))
    assert abs(r) < 0.1


def test_pearson_degenerate(rng):
    a = _gray(rng)
    with pytest.raises(DegenerateInputError):
        pearson(a, GrayImage(np.full((16, 16), 0.5)))


def test_ssim_identity_and_symmetry(rng):
    a = _gray(rng)
    b = _gray(rng)
    assert ssim_reported(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim_reported(a, b) == pytest.approx(ssim_reported(b, a), abs=1e-12)
    assert 0.0 <= ssim_reported(a, b) <= 1.0


def test_ssim_inversion_retry(rng):
    # a noisy image against its negative scores below zero, and the retry
    # against the inverted image recovers the structural match exactly
    a = _gray(rng, 24, 24)
    b = GrayImage(1.0 - a.values)
    assert ssim_reported(a, b) == pytest.approx(1.0, abs=1e-9)


def test_ssim_decays_with_noise(rng):
    a = _gray(rng, 32, 32)
    small = GrayImage(np.clip(a.values + 0.05 * rng.normal(size=(32, 32)), 0, 1))
    big = GrayImage(np.clip(a.values + 0.5 * rng.normal(size=(32, 32)), 0, 1))
    assert ssim_reported(a, small) > ssim_reported(a, big)


def test_ssim_input_policing(rng):
    a = _gray(rng, 8, 8)
    with pytest.raises(ShapeError):
        ssim_reported(a, a)  # smaller than the window
    b16 = _gray(rng, 16, 16)
    with pytest.raises(ShapeError):
        ssim_reported(b16, _gray(rng, 16, 18))
    with pytest.raises(ParameterError):
        ssim_reported(b16, GrayImage(rng.random((16, 16)) * 255, dynamic_range=255.0))


def test_ssim_respects_dynamic_range(rng):
    vals = rng.random((16, 16))
    noisy = np.clip(vals + 0.1 * rng.normal(size=(16, 16)), 0.0, 1.0)
    unit = ssim_reported(GrayImage(vals), GrayImage(noisy))
    wide = ssim_reported(GrayImage(vals * 255, dynamic_range=255.0),
                         GrayImage(noisy * 255, dynamic_range=255.0))
    assert unit == pytest.approx(wide, rel=1e-9)
