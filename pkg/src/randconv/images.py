"""8-bit image files and seeded synthetic test images.

Files are PNG or PGM, 8-bit gray or RGB; pixels map to float64 in [0, 1]
as value/255, and saving rounds clamped values back with rint so an 8-bit
file survives a load/save cycle exactly.

Synthetic images are white noise smoothed by a separable gaussian blur
(reflect padding) and min-max normalized to [0, 1]; the smoothness knob is
the blur sigma, 0 meaning raw noise.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image, UnidentifiedImageError

from .distributions import DOMAIN_SYNTH, substream
from .errors import DataError, ParameterError, ShapeError
from .tensors import FeatureMaps

_MODES = {"L": 1, "RGB": 3}


def load_image(path: str | Path) -> FeatureMaps:
    """Read an 8-bit gray or RGB image into [0, 1] feature maps."""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in _MODES:
                raise DataError(
                    f"{path}: unsupported image mode {mode!r}; need 8-bit L or RGB"
                )
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"{path}: not a readable image: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr, 2, 0)
    return FeatureMaps.from_grid(arr)


def save_image(path: str | Path, maps: FeatureMaps) -> None:
    """Write 1-channel (gray) or 3-channel (RGB) maps as an 8-bit file;
    values are clamped to [0, 1] before quantization. PGM takes gray only."""
    path = Path(path)
    if maps.channels not in (1, 3):
        raise ShapeError(f"can only save 1- or 3-channel maps, got {maps.channels}")
    suffix = path.suffix.lower()
    if suffix not in (".png", ".pgm"):
        raise DataError(f"{path}: unsupported suffix {suffix!r}; use .png or .pgm")
    if suffix == ".pgm" and maps.channels != 1:
        raise DataError(f"{path}: PGM holds a single gray channel")
    quant = np.rint(np.clip(maps.grid(), 0.0, 1.0) * 255.0).astype(np.uint8)
    if maps.channels == 1:
        img = Image.fromarray(quant[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(quant, 0, 2), mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def load_image_dir(directory: str | Path) -> list[tuple[str, FeatureMaps]]:
    """All PNG/PGM images of a directory as (stem, maps), sorted by filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pgm")
    )
    if not paths:
        raise DataError(f"no .png or .pgm images in {directory}")
    return [(p.stem, load_image(p)) for p in paths]


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-(t * t) / (2.0 * sigma * sigma))
    kern /= kern.sum()

    def along_rows(a: np.ndarray) -> np.ndarray:
        padded = np.pad(a, ((0, 0), (radius, radius)), mode="reflect")
        return np.einsum("ijk,k->ij", sliding_window_view(padded, kern.size, axis=1), kern)

    return along_rows(along_rows(img).T).T


def generate_synthetic(
    count: int, size: int, smoothness: float, seed: int
) -> list[FeatureMaps]:
    """Deterministic single-channel noise images; see module docstring."""
    if count < 1:
        raise ParameterError(f"count must be positive, got {count}")
    if size < 1:
        raise ParameterError(f"size must be positive, got {size}")
    if not (smoothness >= 0.0 and np.isfinite(smoothness)):
        raise ParameterError(f"smoothness must be a finite non-negative value, got {smoothness}")
    out = []
    for i in range(count):
        rng = substream(seed, DOMAIN_SYNTH, b=i)
        img = rng.random((size, size))
        if smoothness > 0.0:
            img = _gaussian_blur(img, smoothness)
        lo, hi = float(img.min()), float(img.max())
        img = np.full_like(img, 0.5) if hi == lo else (img - lo) / (hi - lo)
        out.append(FeatureMaps.from_grid(img))
    return out


def write_synthetic(
    directory: str | Path, count: int, size: int, smoothness: float, seed: int
) -> list[Path]:
    """Generate and save synthetic images as img_000.png, img_001.png, ..."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, maps in enumerate(generate_synthetic(count, size, smoothness, seed)):
        p = directory / f"img_{i:03d}.png"
        save_image(p, maps)
        paths.append(p)
    return paths
