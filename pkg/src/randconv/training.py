"""Training a small inversion DCN against a frozen random CNN.

The CNN is fixed (a sampled filter bank); only the DCN's conv filters are
learned, by summed squared reconstruction error, bias-free convs, manual
reverse-mode gradients, and bias-corrected Adam. The gradient surface
covers conv, relu, leaky_relu, upsample, crop, channel_mean and scale
layers; pooling layers are out of scope for the trainable half.

Everything is deterministic under a fixed seed: init, epoch shuffling and
batch order all derive from dedicated substreams.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distributions import DOMAIN_INIT, DOMAIN_SHUFFLE, FilterBank, substream
from .errors import DataError, ParameterError, ShapeError
from .network import NetworkSpec, dim_trace, filter_shapes, forward
from .tensors import FeatureMaps, extract_patches, patch_index

_TRAINABLE_KINDS = frozenset(
    ("conv", "relu", "leaky_relu", "upsample", "crop", "channel_mean", "scale")
)


@dataclass
class TrainConfig:
    """Optimizer and schedule settings; defaults follow the reference setup
    (Adam 1e-4 with 0.9/0.999, batch 32, weight decay 4e-4, halving the
    rate at 50% and 75% of the run)."""

    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 4e-4
    decoupled_weight_decay: bool = False
    batch_size: int = 32
    milestones: tuple[int, ...] | None = None
    lr_decay: float = 0.5
    max_iters: int = 1000
    checkpoint_every: int = 50
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.lr0 > 0.0 and math.isfinite(self.lr0)):
            raise ParameterError(f"lr0 must be positive, got {self.lr0}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not (0.0 <= val < 1.0):
                raise ParameterError(f"{name} must lie in [0, 1), got {val}")
        if not (self.adam_eps > 0.0):
            raise ParameterError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.weight_decay < 0.0:
            raise ParameterError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ParameterError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        for name in ("batch_size", "max_iters", "checkpoint_every"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ParameterError(f"{name} must be a positive integer, got {val!r}")
        if self.seed < 0:
            raise ParameterError(f"seed must be non-negative, got {self.seed}")
        if self.milestones is not None:
            ms = tuple(self.milestones)
            if any(not isinstance(m, int) or m < 1 for m in ms) or list(ms) != sorted(ms):
                raise ParameterError(f"milestones must be an increasing tuple of positive ints, got {ms}")
            object.__setattr__(self, "milestones", ms)

    def resolved_milestones(self) -> tuple[int, ...]:
        if self.milestones is not None:
            return self.milestones
        return tuple(m for m in (self.max_iters // 2, 3 * self.max_iters // 4) if m >= 1)

    def effective_lr(self, step: int) -> float:
        """Learning rate used at 1-based step: each milestone m scales the
        rate for every step after m."""
        crossed = sum(1 for m in self.resolved_milestones() if m < step)
        return self.lr0 * self.lr_decay**crossed


@dataclass
class DcnParams:
    """Trainable filters plus Adam state; mutated in place by adam_step."""

    weights: list[np.ndarray]
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self) -> None:
        self.weights = [np.array(w, dtype=np.float64, order="C") for w in self.weights]
        if not self.m:
            self.m = [np.zeros_like(w) for w in self.weights]
        if not self.v:
            self.v = [np.zeros_like(w) for w in self.weights]
        for name, tensors in (("m", self.m), ("v", self.v)):
            if len(tensors) != len(self.weights) or any(
                t.shape != w.shape for t, w in zip(tensors, self.weights)
            ):
                raise ShapeError(f"optimizer state {name} does not match the weights")

    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(w.shape) for w in self.weights]


def msra_init(shapes: Sequence[tuple[int, int]], slope: float, seed: int) -> DcnParams:
    """Gaussian fan-in init with variance 2 / ((1 + slope^2) * fan_in),
    where fan_in is the filter length (in_channels * kernel^2)."""
    if not (0.0 <= slope < 1.0):
        raise ParameterError(f"slope must lie in [0, 1), got {slope}")
    weights = []
    for i, (count, length) in enumerate(shapes):
        if count < 1 or length < 1:
            raise ParameterError(f"layer {i}: invalid filter shape {(count, length)}")
        std = math.sqrt(2.0 / ((1.0 + slope * slope) * length))
        rng = substream(seed, DOMAIN_INIT, a=i)
        weights.append(rng.normal(0.0, std, (count, length)))
    return DcnParams(weights)


def loss_l2(output: FeatureMaps, target: FeatureMaps) -> float:
    """Summed squared error over all channels and pixels."""
    if (output.channels, output.height, output.width) != (
        target.channels, target.height, target.width,
    ):
        raise ShapeError("output and target dims differ")
    diff = output.data - target.data
    return float((diff * diff).sum())


def _check_trainable(spec: NetworkSpec) -> None:
    if spec.mode != "empirical":
        raise ParameterError("only empirical-mode nets are trainable")
    bad = [l.kind for l in spec.layers if l.kind not in _TRAINABLE_KINDS]
    if bad:
        raise ParameterError(f"no gradients for layer kinds {bad}")


def forward_dcn(
    spec: NetworkSpec, params: DcnParams, x: FeatureMaps
) -> tuple[FeatureMaps, list[tuple]]:
    """Forward pass that records what backward() needs per layer."""
    _check_trainable(spec)
    if params.shapes() != [tuple(s) for s in filter_shapes(spec)]:
        raise ShapeError(f"parameter shapes {params.shapes()} do not match the spec")
    if (x.channels, x.height, x.width) != spec.input_dims:
        raise ShapeError("input dims do not match the spec")
    cur = x
    cache: list[tuple] = []
    conv_i = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            p = patch_index(cur.height, cur.width, layer.kernel, layer.stride, layer.padding)
            patched = extract_patches(cur, p)
            out = params.weights[conv_i] @ patched.data
            cache.append(("conv", conv_i, patched.data, p, cur.channels))
            cur = FeatureMaps(out, p.out_height, p.out_width)
            conv_i += 1
        elif layer.kind in ("relu", "leaky_relu"):
            slope = 0.0 if layer.kind == "relu" else layer.slope
            cache.append(("act", slope, cur.data))
            cur = FeatureMaps(
                np.where(cur.data >= 0.0, cur.data, slope * cur.data), cur.height, cur.width
            )
        elif layer.kind == "upsample":
            cache.append(("upsample", layer.factor, cur.height, cur.width))
            grid = np.zeros((cur.channels, cur.height * layer.factor, cur.width * layer.factor))
            grid[:, ::layer.factor, ::layer.factor] = cur.grid()
            cur = FeatureMaps.from_grid(grid)
        elif layer.kind == "crop":
            cache.append(("crop", cur.height, cur.width, layer.height, layer.width))
            cur = FeatureMaps.from_grid(cur.grid()[:, :layer.height, :layer.width])
        elif layer.kind == "channel_mean":
            cache.append(("channel_mean", cur.channels))
            cur = FeatureMaps(cur.data.mean(axis=0, keepdims=True), cur.height, cur.width)
        else:  # scale
            cache.append(("scale", layer.value))
            cur = FeatureMaps(cur.data * layer.value, cur.height, cur.width)
    return cur, cache


def backward(
    spec: NetworkSpec, params: DcnParams, cache: list[tuple], grad_out: np.ndarray
) -> list[np.ndarray]:
    """Gradients of the loss w.r.t. every conv filter matrix, given the
    loss gradient w.r.t. the network output (channels x pixels)."""
    if len(cache) != len(spec.layers):
        raise ParameterError("cache does not match the spec; rerun forward_dcn")
    grads = [np.zeros_like(w) for w in params.weights]
    g = np.asarray(grad_out, dtype=np.float64)
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "conv":
            _, conv_i, patched, p, in_c = entry
            grads[conv_i] += g @ patched.T
            cols = (params.weights[conv_i].T @ g).reshape(in_c, p.slot_count, -1)
            acc = np.zeros((in_c, p.in_pixels + 1))
            rows = np.arange(in_c)[:, None]
            for s in range(p.slot_count):
                idx = np.where(p.slots[:, s] < 0, p.in_pixels, p.slots[:, s])
                np.add.at(acc, (rows, idx[None, :]), cols[:, s, :])
            g = acc[:, :-1]
        elif kind == "act":
            _, slope, pre = entry
            g = g * np.where(pre >= 0.0, 1.0, slope)
        elif kind == "upsample":
            _, factor, in_h, in_w = entry
            grid = g.reshape(g.shape[0], in_h * factor, in_w * factor)
            g = grid[:, ::factor, ::factor].reshape(g.shape[0], in_h * in_w)
        elif kind == "crop":
            _, in_h, in_w, out_h, out_w = entry
            full = np.zeros((g.shape[0], in_h, in_w))
            full[:, :out_h, :out_w] = g.reshape(g.shape[0], out_h, out_w)
            g = full.reshape(g.shape[0], in_h * in_w)
        elif kind == "channel_mean":
            _, in_c = entry
            g = np.repeat(g / in_c, in_c, axis=0)
        else:  # scale
            g = g * entry[1]
    return grads


def adam_step(params: DcnParams, grads: Sequence[np.ndarray], config: TrainConfig) -> DcnParams:
    """One bias-corrected Adam update, in place. Weight decay is added to
    the gradient (coupled) unless config.decoupled_weight_decay."""
    if len(grads) != len(params.weights):
        raise ShapeError(f"{len(grads)} gradients for {len(params.weights)} weight tensors")
    params.step += 1
    t = params.step
    lr = config.effective_lr(t)
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for w, m, v, g in zip(params.weights, params.m, params.v, grads):
        if g.shape != w.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weights {w.shape}")
        eff = g if config.decoupled_weight_decay else g + config.weight_decay * w
        m *= config.beta1
        m += (1.0 - config.beta1) * eff
        v *= config.beta2
        v += (1.0 - config.beta2) * eff * eff
        update = (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
        if config.decoupled_weight_decay:
            update = update + config.weight_decay * w
        w -= lr * update
    return params


def train_dcn(
    cnn_spec: NetworkSpec,
    cnn_bank: FilterBank,
    dcn_spec: NetworkSpec,
    dataset: Sequence[FeatureMaps],
    config: TrainConfig,
) -> tuple[DcnParams, list[tuple[int, float, float]]]:
    """Fit the DCN to invert the frozen CNN on the dataset.

    Returns the trained parameters and a history of (iteration, lr, loss)
    rows, where loss is the summed reconstruction error over the whole
    dataset at each checkpoint. Representations are precomputed once since
    the CNN never changes.
    """
    if not dataset:
        raise DataError("training dataset is empty")
    for img in dataset:
        if (img.channels, img.height, img.width) != cnn_spec.input_dims:
            raise ShapeError("dataset image dims do not match the CNN input")
    rep_dims = dim_trace(cnn_spec)[-1]
    if rep_dims != dcn_spec.input_dims:
        raise ShapeError(f"CNN output {rep_dims} does not match DCN input {dcn_spec.input_dims}")
    out_dims = dim_trace(dcn_spec)[-1]
    if out_dims != cnn_spec.input_dims:
        raise ShapeError(f"DCN output {out_dims} does not match the image dims {cnn_spec.input_dims}")
    _check_trainable(dcn_spec)

    reps = [forward(cnn_spec, cnn_bank, img).output for img in dataset]
    slope = next((l.slope for l in dcn_spec.layers if l.kind == "leaky_relu"), 0.0)
    params = msra_init(filter_shapes(dcn_spec), slope, config.seed)

    n = len(dataset)
    epoch = 0
    order = substream(config.seed, DOMAIN_SHUFFLE, a=epoch).permutation(n)
    pos = 0
    history: list[tuple[int, float, float]] = []
    for it in range(1, config.max_iters + 1):
        if pos >= n:
            epoch += 1
            order = substream(config.seed, DOMAIN_SHUFFLE, a=epoch).permutation(n)
            pos = 0
        batch = order[pos:pos + config.batch_size]
        pos += config.batch_size
        grads = [np.zeros_like(w) for w in params.weights]
        for idx in batch:
            out, cache = forward_dcn(dcn_spec, params, reps[idx])
            g = 2.0 * (out.data - dataset[idx].data)
            for acc, dg in zip(grads, backward(dcn_spec, params, cache, g)):
                acc += dg
        adam_step(params, grads, config)
        if it % config.checkpoint_every == 0 or it == config.max_iters:
            total = sum(
                loss_l2(forward_dcn(dcn_spec, params, rep)[0], img)
                for rep, img in zip(reps, dataset)
            )
            history.append((it, config.effective_lr(it), float(total)))
    return params, history


def write_history_csv(path: str | Path, history: Sequence[tuple[int, float, float]]) -> None:
    lines = ["iter,lr,loss"]
    for it, lr, loss in history:
        lines.append(f"{it},{lr:.17g},{loss:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


_MAGIC = b"RCKP"
_VERSION = 1


def save_checkpoint(path: str | Path, params: DcnParams) -> None:
    """Weights plus Adam state and step, versioned, bit-exact."""
    parts = [_MAGIC, struct.pack("<HQI", _VERSION, params.step, len(params.weights))]
    for w in params.weights:
        parts.append(struct.pack("<II", w.shape[0], w.shape[1]))
    for group in (params.weights, params.m, params.v):
        for arr in group:
            parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path) -> DcnParams:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    try:
        version, step, n = struct.unpack_from("<HQI", raw, 4)
        if version != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        off = 4 + struct.calcsize("<HQI")
        shapes = []
        for _ in range(n):
            shapes.append(struct.unpack_from("<II", raw, off))
            off += 8
        groups = []
        for _ in range(3):
            arrs = []
            for count, length in shapes:
                size = count * length
                arrs.append(
                    np.frombuffer(raw, dtype="<f8", count=size, offset=off)
                    .reshape(count, length).copy()
                )
                off += size * 8
            groups.append(arrs)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return DcnParams(weights=groups[0], m=groups[1], v=groups[2], step=step)
