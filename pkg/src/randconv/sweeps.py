"""Desk-scale reconstruction experiments over random-weight nets.

A sweep evaluates one preset family across a parameter grid (channel count
or kernel size): for each parameter value it samples `nets` independent
filter banks, pushes every image through, and scores grayscale SSIM and
Pearson correlation against the input. Raw rows keep every (param, net,
image) score; aggregates average per net first, then report mean and
sample standard deviation (n-1) across nets.

Network seeds derive as seed + net_index, so adding nets extends a sweep
without changing existing rows. Reconstructions have arbitrary scale under
random filters, so outputs leaving [0, 1] are min-max rescaled before
scoring (in-range outputs are untouched); a constant output scores
pearson 0 instead of raising.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .distributions import DistributionSpec, sample_filterbank
from .errors import DataError, DegenerateInputError, ParameterError
from .metrics import GrayImage, pearson, ssim_reported, to_gray
from .network import NetworkSpec, build_preset, filter_shapes, forward
from .tensors import FeatureMaps


@dataclass(frozen=True)
class SweepRow:
    sweep_param: int
    net_index: int
    image_id: str
    ssim: float
    pearson: float


@dataclass(frozen=True)
class SweepAggregate:
    sweep_param: int
    ssim_mean: float
    ssim_std: float
    corr_mean: float
    corr_std: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    aggregates: tuple[SweepAggregate, ...]


def normalize_for_display(maps: FeatureMaps) -> FeatureMaps:
    """Min-max rescale to [0, 1] if any value falls outside; constant
    out-of-range maps flatten to 0.5."""
    lo, hi = float(maps.data.min()), float(maps.data.max())
    if 0.0 <= lo and hi <= 1.0:
        return maps
    if hi == lo:
        return FeatureMaps(np.full_like(maps.data, 0.5), maps.height, maps.width)
    return FeatureMaps((maps.data - lo) / (hi - lo), maps.height, maps.width)


def _stretch(g: GrayImage) -> GrayImage:
    """Full min-max contrast stretch to [0, 1]; constant images go flat 0.5."""
    lo, hi = float(g.values.min()), float(g.values.max())
    if hi == lo:
        return GrayImage(np.full_like(g.values, 0.5))
    return GrayImage((g.values - lo) / (hi - lo))


def score_reconstruction(original: FeatureMaps, output: FeatureMaps) -> tuple[float, float]:
    """(ssim, pearson) between contrast-stretched grayscale versions of the
    input and the reconstruction.

    Random nets emit values in an arbitrary scale band, so both images get a
    full min-max stretch before comparison; structure, not brightness, is
    what the score should react to. Pearson is affine-invariant, so only
    SSIM actually depends on this."""
    ref = _stretch(to_gray(original))
    rec = _stretch(to_gray(output))
    ssim = ssim_reported(ref, rec)
    try:
        corr = pearson(ref, rec)
    except DegenerateInputError:
        corr = 0.0
    return ssim, corr


def _evaluate_net(
    spec: NetworkSpec,
    dist: DistributionSpec,
    seed: int,
    images: Sequence[tuple[str, FeatureMaps]],
) -> list[tuple[str, float, float]]:
    bank = sample_filterbank(dist, filter_shapes(spec), seed)
    out = []
    for image_id, img in images:
        rec = forward(spec, bank, img).output
        ssim, corr = score_reconstruction(img, rec)
        out.append((image_id, ssim, corr))
    return out


def _run_sweep(
    specs: Sequence[tuple[int, NetworkSpec]],
    nets: int,
    images: Sequence[tuple[str, FeatureMaps]],
    dist: DistributionSpec,
    seed: int,
    threads: int,
) -> SweepResult:
    if nets < 1:
        raise ParameterError(f"need at least one net, got {nets}")
    if not images:
        raise DataError("no images to sweep over")
    dims = {(img.channels, img.height, img.width) for _, img in images}
    if len(dims) > 1:
        raise DataError(f"images must share one size, found {sorted(dims)}")

    tasks = [(param, spec, net) for param, spec in specs for net in range(nets)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_evaluate_net, spec, dist, seed + net, images)
                for param, spec, net in tasks
            ]
            scores = [f.result() for f in futures]
    else:
        scores = [
            _evaluate_net(spec, dist, seed + net, images) for param, spec, net in tasks
        ]

    rows: list[SweepRow] = []
    per_net: dict[int, list[tuple[float, float]]] = {}
    for (param, _spec, net), result in zip(tasks, scores):
        ss, cc = [], []
        for image_id, ssim, corr in result:
            rows.append(SweepRow(param, net, image_id, ssim, corr))
            ss.append(ssim)
            cc.append(corr)
        per_net.setdefault(param, []).append((float(np.mean(ss)), float(np.mean(cc))))

    aggregates = []
    for param, _spec in specs:
        vals = np.array(per_net[param])
        ssim_mean = float(vals[:, 0].mean())
        corr_mean = float(vals[:, 1].mean())
        if len(vals) > 1:
            ssim_std = float(vals[:, 0].std(ddof=1))
            corr_std = float(vals[:, 1].std(ddof=1))
        else:
            ssim_std = corr_std = float("nan")
        aggregates.append(SweepAggregate(param, ssim_mean, ssim_std, corr_mean, corr_std))
    return SweepResult(tuple(rows), tuple(aggregates))


def sweep_channels(
    channels: Sequence[int],
    nets: int,
    images: Sequence[tuple[str, FeatureMaps]],
    variant: bool = False,
    dist: DistributionSpec | None = None,
    activation: str | None = None,
    seed: int = 0,
    threads: int = 1,
) -> SweepResult:
    """Reconstruction quality versus uniform channel count, on the
    two-conv/pool/upsample/two-conv preset (variant swaps the last conv
    for a channel mean)."""
    if not channels:
        raise ParameterError("channel list is empty")
    dist = dist or DistributionSpec("gaussian", 0.1)
    name = "rrvgg_conv1_deconv1_variant" if variant else "rrvgg_conv1_deconv1"
    dims = (images[0][1].channels, images[0][1].height, images[0][1].width) if images else None
    if dims is None:
        raise DataError("no images to sweep over")
    specs = [
        (int(c), build_preset(name, dims, channel_override=int(c), activation=activation))
        for c in channels
    ]
    return _run_sweep(specs, nets, images, dist, seed, threads)


def sweep_kernel(
    kernels: Sequence[int],
    nets: int,
    images: Sequence[tuple[str, FeatureMaps]],
    channels: int = 64,
    dist: DistributionSpec | None = None,
    activation: str | None = None,
    seed: int = 0,
    threads: int = 1,
) -> SweepResult:
    """Reconstruction quality versus kernel size, on the one-conv-each-way
    preset with a fixed channel count."""
    if not kernels:
        raise ParameterError("kernel list is empty")
    dist = dist or DistributionSpec("gaussian", 0.1)
    if not images:
        raise DataError("no images to sweep over")
    dims = (images[0][1].channels, images[0][1].height, images[0][1].width)
    specs = [
        (int(k), build_preset("rrvgg_conv1_1", dims, channel_override=channels, kernel=int(k)))
        for k in kernels
    ]
    return _run_sweep(specs, nets, images, dist, seed, threads)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_sweep_csv(result: SweepResult, raw_path: str | Path, agg_path: str | Path) -> None:
    """Fixed column order: raw sweep_param,net_index,image_id,ssim,pearson;
    aggregate sweep_param,ssim_mean,ssim_std,corr_mean,corr_std."""
    raw_lines = ["sweep_param,net_index,image_id,ssim,pearson"]
    for r in result.rows:
        raw_lines.append(
            f"{r.sweep_param},{r.net_index},{r.image_id},{_fmt(r.ssim)},{_fmt(r.pearson)}"
        )
    Path(raw_path).write_text("\n".join(raw_lines) + "\n")
    agg_lines = ["sweep_param,ssim_mean,ssim_std,corr_mean,corr_std"]
    for a in result.aggregates:
        agg_lines.append(
            f"{a.sweep_param},{_fmt(a.ssim_mean)},{_fmt(a.ssim_std)},"
            f"{_fmt(a.corr_mean)},{_fmt(a.corr_std)}"
        )
    Path(agg_path).write_text("\n".join(agg_lines) + "\n")
