"""Feature-map storage and the forward primitives of the conv engine.

A layer's activations live in a FeatureMaps value: float64, one flat
row-major pixel row per channel. Sliding-window structure is precomputed
once per (dims, kernel, stride, padding) into a PatchIndex whose slot table
drives patch extraction, pooling and the analytic recurrences alike, so the
Monte-Carlo path and the closed-form path see exactly the same windows.

All primitives are pure: same inputs give bitwise-identical outputs, and
every returned array is marked read-only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureMaps:
    """Activations of one layer: `channels` maps over a height x width grid.

    data has shape (channels, height*width), float64, pixels in row-major
    order. The constructor copies and freezes the array.
    """

    data: np.ndarray
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ShapeError(f"grid must be at least 1x1, got {self.height}x{self.width}")
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ShapeError(f"feature data must be 2-D (channels, pixels), got shape {arr.shape}")
        if arr.shape[1] != self.height * self.width:
            raise ShapeError(
                f"pixel count {arr.shape[1]} does not match {self.height}x{self.width} grid"
            )
        if not np.all(np.isfinite(arr)):
            raise ParameterError("feature maps must be finite")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> "FeatureMaps":
        """Build from a (channels, height, width) or (height, width) array."""
        g = np.asarray(grid, dtype=np.float64)
        if g.ndim == 2:
            g = g[None, :, :]
        if g.ndim != 3:
            raise ShapeError(f"expected 2-D or 3-D grid, got {g.ndim}-D")
        return cls(g.reshape(g.shape[0], -1), g.shape[1], g.shape[2])

    def grid(self) -> np.ndarray:
        """Read-only view shaped (channels, height, width)."""
        return self.data.reshape(self.channels, self.height, self.width)


@dataclass(frozen=True)
class PatchIndex:
    """Window layout of one sliding-window op over an in_height x in_width grid.

    slots[m] lists the flat input pixel index of every slot of window m, in
    row-major order within the window; -1 marks a slot that falls outside
    the grid (zero padding). Windows themselves are enumerated row-major
    over the out_height x out_width output grid.
    """

    kernel: int
    stride: int
    padding: int
    in_height: int
    in_width: int
    out_height: int
    out_width: int
    slots: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.slots, dtype=np.int64)
        if s.shape != (self.out_height * self.out_width, self.kernel * self.kernel):
            raise ShapeError("slot table shape does not match the declared window grid")
        if s.max(initial=-1) >= self.in_height * self.in_width:
            raise ShapeError("slot index beyond input grid")
        object.__setattr__(self, "slots", _freeze(np.ascontiguousarray(s)))

    @property
    def patch_count(self) -> int:
        return self.out_height * self.out_width

    @property
    def slot_count(self) -> int:
        return self.kernel * self.kernel

    @property
    def in_pixels(self) -> int:
        return self.in_height * self.in_width


def _axis_extent(size: int, kernel: int, stride: int, padding: int, ceil_mode: bool) -> int:
    span = size + 2 * padding - kernel
    if ceil_mode:
        out = -(-span // stride) + 1
        # drop a trailing window that would start past the padded input
        while out > 1 and (out - 1) * stride >= size + padding:
            out -= 1
    else:
        out = span // stride + 1
    if out < 1:
        raise ShapeError(
            f"kernel {kernel} with padding {padding} does not fit extent {size}"
        )
    return out


def patch_index(
    height: int,
    width: int,
    kernel: int,
    stride: int,
    padding: int = 0,
    ceil_mode: bool = False,
) -> PatchIndex:
    """Precompute the slot table of a kernel x kernel sliding window.

    ceil_mode rounds the output extent up instead of down (pooling presets
    need it); slots that land outside the grid are marked -1 whether they
    come from declared padding or from ceil-mode overhang.
    """
    if kernel < 1 or stride < 1:
        raise ParameterError(f"kernel and stride must be positive, got {kernel}, {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be non-negative, got {padding}")
    out_h = _axis_extent(height, kernel, stride, padding, ceil_mode)
    out_w = _axis_extent(width, kernel, stride, padding, ceil_mode)

    row0 = np.arange(out_h, dtype=np.int64) * stride - padding
    col0 = np.arange(out_w, dtype=np.int64) * stride - padding
    rows = row0[:, None] + np.arange(kernel, dtype=np.int64)[None, :]
    cols = col0[:, None] + np.arange(kernel, dtype=np.int64)[None, :]
    rv = (rows >= 0) & (rows < height)
    cv = (cols >= 0) & (cols < width)

    # combine per-axis indexes into flat pixel ids, -1 where out of range
    flat = rows[:, None, :, None] * width + cols[None, :, None, :]
    valid = rv[:, None, :, None] & cv[None, :, None, :]
    slots = np.where(valid, flat, -1).reshape(out_h * out_w, kernel * kernel)
    return PatchIndex(kernel, stride, padding, height, width, out_h, out_w, slots)


@dataclass(frozen=True)
class PatchedMaps:
    """im2col layout of one layer's input: column j is window j.

    data has shape (channels * kernel^2, patch_count); within a column the
    rows are channel-major, row-major inside each window, and padding slots
    hold exact zeros.
    """

    data: np.ndarray
    channels: int
    index: PatchIndex

    def __post_init__(self) -> None:
        expected = (self.channels * self.index.slot_count, self.index.patch_count)
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != expected:
            raise ShapeError(f"patched data shape {arr.shape}, expected {expected}")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(arr)))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def _gathered(x: FeatureMaps, p: PatchIndex, fill: float) -> np.ndarray:
    """Window values as (channels, patch_count, slot_count), `fill` where padded."""
    if (p.in_height, p.in_width) != (x.height, x.width):
        raise ShapeError(
            f"patch index built for {p.in_height}x{p.in_width}, "
            f"input is {x.height}x{x.width}"
        )
    pad_col = np.full((x.channels, 1), fill, dtype=np.float64)
    flat = np.concatenate([x.data, pad_col], axis=1)
    idx = np.where(p.slots < 0, x.pixels, p.slots)
    return flat[:, idx]


def extract_patches(x: FeatureMaps, p: PatchIndex) -> PatchedMaps:
    """im2col: lay every window of x out as one column."""
    vals = _gathered(x, p, 0.0)  # (C, patches, slots)
    cols = np.transpose(vals, (0, 2, 1)).reshape(x.channels * p.slot_count, p.patch_count)
    return PatchedMaps(cols, x.channels, p)


def conv_forward(y: PatchedMaps, filters: np.ndarray) -> FeatureMaps:
    """Convolution as a matrix product: filters (n_out, C*kernel^2) @ columns."""
    w = np.asarray(getattr(filters, "values", filters), dtype=np.float64)
    if w.ndim != 2:
        raise ShapeError(f"filter matrix must be 2-D, got {w.ndim}-D")
    if w.shape[1] != y.rows:
        raise ShapeError(
            f"filter length {w.shape[1]} does not match patched rows {y.rows}"
        )
    out = w @ y.data
    return FeatureMaps(out, y.index.out_height, y.index.out_width)


def relu(x: FeatureMaps) -> FeatureMaps:
    return FeatureMaps(np.maximum(x.data, 0.0), x.height, x.width)


def leaky_relu(x: FeatureMaps, slope: float) -> FeatureMaps:
    if not (0.0 <= slope < 1.0) or not math.isfinite(slope):
        raise ParameterError(f"leaky slope must lie in [0, 1), got {slope}")
    return FeatureMaps(np.where(x.data >= 0.0, x.data, slope * x.data), x.height, x.width)


def max_pool(x: FeatureMaps, p: PatchIndex) -> FeatureMaps:
    """Per-channel window maximum over in-bounds slots only."""
    vals = _gathered(x, p, -np.inf)
    out = vals.max(axis=2)
    if not np.all(np.isfinite(out)):
        raise ShapeError("a pooling window contains no in-bounds pixels")
    return FeatureMaps(out, p.out_height, p.out_width)


def l2_pool(x: FeatureMaps, p: PatchIndex) -> FeatureMaps:
    """Per-channel window L2 norm; padding slots contribute exact zeros."""
    vals = _gathered(x, p, 0.0)
    return FeatureMaps(np.sqrt((vals * vals).sum(axis=2)), p.out_height, p.out_width)


def avg_pool(x: FeatureMaps, p: PatchIndex) -> FeatureMaps:
    """Per-channel window mean over the full slot count, padding counted as zero."""
    vals = _gathered(x, p, 0.0)
    return FeatureMaps(vals.sum(axis=2) / p.slot_count, p.out_height, p.out_width)


def upsample(x: FeatureMaps, factor: int) -> FeatureMaps:
    """Zero insertion: each pixel lands at the top-left slot of its factor^2 block."""
    if factor < 1:
        raise ParameterError(f"upsample factor must be positive, got {factor}")
    out = np.zeros((x.channels, x.height * factor, x.width * factor))
    out[:, ::factor, ::factor] = x.grid()
    return FeatureMaps.from_grid(out)


def crop(x: FeatureMaps, height: int, width: int) -> FeatureMaps:
    """Keep the top-left height x width corner."""
    if not (1 <= height <= x.height and 1 <= width <= x.width):
        raise ShapeError(
            f"cannot crop {x.height}x{x.width} maps to {height}x{width}"
        )
    return FeatureMaps.from_grid(x.grid()[:, :height, :width])


def channel_mean(x: FeatureMaps) -> FeatureMaps:
    """Arithmetic mean across channels, yielding a single map."""
    return FeatureMaps(x.data.mean(axis=0, keepdims=True), x.height, x.width)


def scale(x: FeatureMaps, value: float) -> FeatureMaps:
    if not math.isfinite(value):
        raise ParameterError(f"scale factor must be finite, got {value}")
    return FeatureMaps(x.data * value, x.height, x.width)
