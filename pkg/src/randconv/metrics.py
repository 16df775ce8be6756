"""Grayscale conversion and the reconstruction quality metrics.

Reported SSIM follows the usual reference setup: 11x11 gaussian window with
sigma 1.5, stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2, windowed stats
taken in valid mode, mean over local values. Random-filter reconstructions
can come out contrast-inverted, so a negative mean SSIM triggers one retry
against the inverted second image (L - b) and the result is clamped to
[0, 1]; Pearson correlation is reported alongside as the inversion- and
scale-sensitive counterpart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateInputError, ParameterError, ShapeError
from .tensors import FeatureMaps

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
_WINDOW_SIDE = 11
_WINDOW_SIGMA = 1.5


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with values clamped to [0, dynamic_range]."""

    values: np.ndarray
    dynamic_range: float = 1.0

    def __post_init__(self) -> None:
        if not (self.dynamic_range > 0.0 and np.isfinite(self.dynamic_range)):
            raise ParameterError(f"dynamic range must be positive, got {self.dynamic_range}")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"gray image must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("gray image must be finite")
        arr = np.clip(arr, 0.0, self.dynamic_range)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def to_gray(x: FeatureMaps, dynamic_range: float = 1.0) -> GrayImage:
    """Collapse maps to one gray channel: 1 channel passes through, 3
    channels combine with the 0.299/0.587/0.114 luma weights."""
    if x.channels == 1:
        vals = x.grid()[0]
    elif x.channels == 3:
        vals = np.einsum("c,chw->hw", _GRAY_WEIGHTS, x.grid())
    else:
        raise ShapeError(f"grayscale needs 1 or 3 channels, got {x.channels}")
    return GrayImage(vals, dynamic_range)


def _check_same_grid(a: GrayImage, b: GrayImage) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(
            f"image sizes differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def pearson(a: GrayImage, b: GrayImage) -> float:
    """Plain correlation coefficient over all pixels."""
    _check_same_grid(a, b)
    da = a.values.ravel() - a.values.mean()
    db = b.values.ravel() - b.values.mean()
    va, vb = float(da @ da), float(db @ db)
    if va == 0.0 or vb == 0.0:
        raise DegenerateInputError("pearson is undefined for a constant image")
    return float(np.clip((da @ db) / np.sqrt(va * vb), -1.0, 1.0))


def _gaussian_window() -> np.ndarray:
    half = (_WINDOW_SIDE - 1) / 2.0
    g = np.exp(-((np.arange(_WINDOW_SIDE) - half) ** 2) / (2.0 * _WINDOW_SIGMA**2))
    g /= g.sum()
    win = np.outer(g, g)
    return win / win.sum()


def _windowed(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    views = sliding_window_view(img, win.shape)
    return np.einsum("ijkl,kl->ij", views, win)


def _mean_ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float) -> float:
    win = _gaussian_window()
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a = _windowed(a, win)
    mu_b = _windowed(b, win)
    var_a = _windowed(a * a, win) - mu_a * mu_a
    var_b = _windowed(b * b, win) - mu_b * mu_b
    cov = _windowed(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def ssim_reported(a: GrayImage, b: GrayImage) -> float:
    """Mean local SSIM with the inversion retry described in the module
    docstring. Both images must share their grid and dynamic range and be
    at least as large as the 11x11 window."""
    _check_same_grid(a, b)
    if a.dynamic_range != b.dynamic_range:
        raise ParameterError("images must share one dynamic range")
    if a.height < _WINDOW_SIDE or a.width < _WINDOW_SIDE:
        raise ShapeError(
            f"image {a.height}x{a.width} is smaller than the {_WINDOW_SIDE}x{_WINDOW_SIDE} window"
        )
    value = _mean_ssim(a.values, b.values, a.dynamic_range)
    if value < 0.0:
        value = _mean_ssim(a.values, a.dynamic_range - b.values, a.dynamic_range)
    return float(np.clip(value, 0.0, 1.0))
