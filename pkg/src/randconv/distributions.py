"""Filter distributions, their rectified-projection moments, and filter banks.

For a filter w with i.i.d. symmetric entries and a fixed vector y, the
rectified projection g = max(w.y, 0) has moments E g^m = k_m |y|^m whenever
the entry law is rotation invariant (gaussian). The per-family constants

    k_m = E|w_1|^m / 2,    K_m = (k_{2m} - k_m^2) / k_m^2

drive every closed-form limit and deviation bound in `theory`. Closed forms
implemented here (scale s is the stdev for gaussian, the half-width of
[-s, s) for uniform, and the usual scale for logistic/laplace):

    gaussian:  k1 = s/sqrt(2 pi)   k2 = s^2/2        k4 = 3 s^4/2
    uniform:   k1 = s/4            k2 = s^2/6        k4 = s^4/10
    logistic:  k1 = s ln 2         k2 = pi^2 s^2/6   k4 = 7 pi^4 s^4/30
    laplace:   k1 = s/2            k2 = s^2          k4 = 12 s^4

Sampling is reproducible and parallel-safe: every (seed, layer, filter)
triple owns a disjoint Philox counter substream, so adding layers or
filters never perturbs the values drawn for existing ones.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError

FAMILIES = ("gaussian", "uniform", "logistic", "laplace")

_MASK64 = (1 << 64) - 1

# counter-word domains, so one user seed never aliases streams across uses
DOMAIN_FILTERS = 1
DOMAIN_SYNTH = 2
DOMAIN_INIT = 3
DOMAIN_SHUFFLE = 4


def substream(seed: int, domain: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Independent generator for the (seed, domain, a, b) cell.

    Philox is counter based: distinct keys or distinct high counter words
    give non-overlapping streams, and words 0 of the counter leaves 2^64
    draws of room per cell.
    """
    if seed < 0:
        raise ParameterError(f"seed must be a non-negative integer, got {seed}")
    key = np.array([seed & _MASK64, a & _MASK64], dtype=np.uint64)
    counter = np.array([0, b & _MASK64, domain & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def derive_seed(seed: int, index: int) -> int:
    """Stateless splitmix64 finalizer, used to fan one seed into many."""
    z = (seed + 0x9E3779B97F4A7C15 * (index + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class DistributionSpec:
    """Zero-mean symmetric filter law: a family name plus one scale."""

    family: str
    scale: float

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ParameterError(
                f"unknown family {self.family!r}, expected one of {FAMILIES}"
            )
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ParameterError(f"scale must be positive and finite, got {self.scale}")


@dataclass(frozen=True)
class Moments:
    """Rectified-projection moments of one distribution (see module docstring)."""

    family: str
    k1: float
    k2: float
    k4: float
    K1: float
    K2: float


def moments(spec: DistributionSpec) -> Moments:
    """Closed-form k1, k2, k4 and the scale-free ratios K1, K2."""
    s = spec.scale
    if spec.family == "gaussian":
        k1 = s / np.sqrt(2.0 * np.pi)
        k2 = s * s / 2.0
        k4 = 1.5 * s**4
    elif spec.family == "uniform":
        k1 = s / 4.0
        k2 = s * s / 6.0
        k4 = s**4 / 10.0
    elif spec.family == "logistic":
        k1 = s * np.log(2.0)
        k2 = np.pi**2 * s * s / 6.0
        k4 = 7.0 * np.pi**4 * s**4 / 30.0
    else:  # laplace
        k1 = s / 2.0
        k2 = s * s
        k4 = 12.0 * s**4
    return Moments(
        family=spec.family,
        k1=float(k1),
        k2=float(k2),
        k4=float(k4),
        K1=float((k2 - k1 * k1) / (k1 * k1)),
        K2=float((k4 - k2 * k2) / (k2 * k2)),
    )


def angular_kernel(theta):
    """Correlation shape of two rectified projections at angle theta.

    Returns ((pi - theta) cos theta + sin theta) / pi, the factor by which
    E[g_i g_j] falls off as the underlying vectors open from angle 0 to pi;
    the k2 |y_i| |y_j| scale is not included. Accepts scalars or arrays,
    values clamped to [0, pi].
    """
    t = np.asarray(theta, dtype=np.float64)
    if np.any(np.isnan(t)):
        raise ParameterError("angle must not be NaN")
    t = np.clip(t, 0.0, np.pi)
    out = ((np.pi - t) * np.cos(t) + np.sin(t)) / np.pi
    return float(out) if np.isscalar(theta) or out.ndim == 0 else out


@dataclass(frozen=True)
class LayerFilters:
    """One conv layer's filters, one row per output channel."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ParameterError(f"filters must form a non-empty 2-D matrix, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParameterError("filters must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FilterBank:
    """All conv filters of one network instance, in layer order."""

    layers: tuple[LayerFilters, ...]
    spec: DistributionSpec
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))

    def shapes(self) -> list[tuple[int, int]]:
        return [(lf.count, lf.length) for lf in self.layers]


def _draw(rng: np.random.Generator, spec: DistributionSpec, n: int) -> np.ndarray:
    s = spec.scale
    if spec.family == "gaussian":
        return rng.normal(0.0, s, n)
    if spec.family == "uniform":
        return rng.uniform(-s, s, n)
    if spec.family == "logistic":
        return rng.logistic(0.0, s, n)
    return rng.laplace(0.0, s, n)


def sample_filterbank(
    spec: DistributionSpec, shapes: Sequence[tuple[int, int]], seed: int
) -> FilterBank:
    """Draw a bank with the given per-layer (count, length) shapes.

    Filter j of layer i always reads the same substream regardless of the
    other shapes, so regenerating with the same (spec, shapes, seed) is
    bit-exact and extending the net leaves earlier filters untouched.
    """
    layers = []
    for i, (count, length) in enumerate(shapes):
        if count < 1 or length < 1:
            raise ParameterError(f"layer {i}: filter shape must be positive, got {(count, length)}")
        mat = np.empty((count, length), dtype=np.float64)
        for j in range(count):
            rng = substream(seed, DOMAIN_FILTERS, a=i, b=j)
            mat[j] = _draw(rng, spec, length)
        layers.append(LayerFilters(mat))
    return FilterBank(tuple(layers), spec, seed)


_MAGIC = b"RCNB"
_VERSION = 1


def save_filterbank(path: str | Path, bank: FilterBank) -> None:
    """Serialize a bank to a small versioned binary file (bit-exact values)."""
    parts = [_MAGIC, struct.pack("<H", _VERSION)]
    fam = FAMILIES.index(bank.spec.family)
    parts.append(struct.pack("<BxdQI", fam, bank.spec.scale, bank.seed, len(bank.layers)))
    for lf in bank.layers:
        parts.append(struct.pack("<II", lf.count, lf.length))
    for lf in bank.layers:
        parts.append(lf.values.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_filterbank(path: str | Path) -> FilterBank:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read filter bank {path}: {exc}") from exc
    if len(raw) < 6 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a filter bank file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported filter bank version {version}")
    off = 6
    try:
        fam, scale, seed, n_layers = struct.unpack_from("<BxdQI", raw, off)
        off += struct.calcsize("<BxdQI")
        shapes = []
        for _ in range(n_layers):
            count, length = struct.unpack_from("<II", raw, off)
            off += 8
            shapes.append((count, length))
        layers = []
        for count, length in shapes:
            n = count * length
            vals = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(count, length)
            off += n * 8
            layers.append(LayerFilters(vals))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt filter bank") from exc
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in filter bank")
    if fam >= len(FAMILIES):
        raise DataError(f"{path}: unknown family code {fam}")
    return FilterBank(tuple(layers), DistributionSpec(FAMILIES[fam], scale), seed)
