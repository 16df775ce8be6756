"""Shared oracles for the test suite.

The naive routines here deliberately use plain nested loops and no library
helpers, so they stay an independent check on the vectorized code paths.
"""
from __future__ import annotations

import math

import numpy as np
import pytest


def naive_out_extent(size: int, kernel: int, stride: int, padding: int, ceil_mode: bool = False) -> int:
    span = size + 2 * padding - kernel
    if ceil_mode:
        out = -(-span // stride) + 1
        while out > 1 and (out - 1) * stride >= size + padding:
            out -= 1
        return out
    return span // stride + 1


def naive_conv(grid: np.ndarray, filters: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Direct convolution of a (c, h, w) grid with (n, c, k, k) filters."""
    c, h, w = grid.shape
    n, c2, k, _ = filters.shape
    assert c == c2
    oh = naive_out_extent(h, k, stride, padding)
    ow = naive_out_extent(w, k, stride, padding)
    out = np.zeros((n, oh, ow))
    for f in range(n):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ch in range(c):
                    for a in range(k):
                        for b in range(k):
                            r = i * stride + a - padding
                            s = j * stride + b - padding
                            if 0 <= r < h and 0 <= s < w:
                                acc += grid[ch, r, s] * filters[f, ch, a, b]
                out[f, i, j] = acc
    return out


def naive_pool(grid: np.ndarray, kind: str, kernel: int, stride: int,
               padding: int = 0, ceil_mode: bool = False) -> np.ndarray:
    """Direct max/l2/avg pooling; avg divides by kernel^2, max ignores
    out-of-bounds slots, l2 and avg count them as zeros."""
    c, h, w = grid.shape
    oh = naive_out_extent(h, kernel, stride, padding, ceil_mode)
    ow = naive_out_extent(w, kernel, stride, padding, ceil_mode)
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                vals = []
                for a in range(kernel):
                    for b in range(kernel):
                        r = i * stride + a - padding
                        s = j * stride + b - padding
                        if 0 <= r < h and 0 <= s < w:
                            vals.append(grid[ch, r, s])
                if kind == "max":
                    out[ch, i, j] = max(vals)
                elif kind == "l2":
                    out[ch, i, j] = math.sqrt(sum(v * v for v in vals))
                else:
                    out[ch, i, j] = sum(vals) / (kernel * kernel)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
