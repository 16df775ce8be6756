"""Network descriptions, the forward executor, and the architecture presets.

A NetworkSpec is a validated, immutable layer list plus input dims and a
mode. `empirical` mode runs the layers verbatim. `analytic` mode lists only
structural layers (conv, l2/avg pool, upsample, ending on a conv); the
executor inserts ReLU after every conv, 1/sqrt(N) scaling after every conv
except the last one, and a final channel mean, which is the normalized form
whose wide-width limit `theory` computes in closed form.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensors as T
from .distributions import FilterBank
from .errors import DataError, ParameterError, ShapeError
from .tensors import FeatureMaps, patch_index

MODES = ("empirical", "analytic")

_POOL_KINDS = ("max_pool", "l2_pool", "avg_pool")
_KINDS = ("conv", "relu", "leaky_relu") + _POOL_KINDS + ("upsample", "crop", "channel_mean", "scale")
_ANALYTIC_KINDS = ("conv", "l2_pool", "avg_pool", "upsample")

# which optional fields each kind must / may carry
_REQUIRED = {
    "conv": ("kernel", "stride", "out_channels"),
    "relu": (),
    "leaky_relu": ("slope",),
    "max_pool": ("kernel", "stride"),
    "l2_pool": ("kernel", "stride"),
    "avg_pool": ("kernel", "stride"),
    "upsample": ("factor",),
    "crop": ("height", "width"),
    "channel_mean": (),
    "scale": ("value",),
}
_OPTIONAL = {
    "conv": ("padding",),
    "max_pool": ("padding", "ceil_mode"),
    "l2_pool": ("padding", "ceil_mode"),
    "avg_pool": ("padding", "ceil_mode"),
}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a network; only the fields its kind needs may be set."""

    kind: str
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    out_channels: int | None = None
    slope: float | None = None
    factor: int | None = None
    height: int | None = None
    width: int | None = None
    value: float | None = None
    ceil_mode: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        allowed = set(_REQUIRED[self.kind]) | set(_OPTIONAL.get(self.kind, ()))
        for name in ("kernel", "stride", "padding", "out_channels", "slope",
                     "factor", "height", "width", "value"):
            val = getattr(self, name)
            if name in _REQUIRED[self.kind] and val is None:
                raise ParameterError(f"{self.kind} layer requires {name}")
            if name not in allowed and val is not None:
                raise ParameterError(f"{self.kind} layer does not take {name}")
        if self.ceil_mode and "ceil_mode" not in allowed:
            raise ParameterError(f"{self.kind} layer does not take ceil_mode")
        self._check_ranges()
        if self.kind == "conv" and self.padding is None:
            object.__setattr__(self, "padding", 0)
        if self.kind in _POOL_KINDS and self.padding is None:
            object.__setattr__(self, "padding", 0)

    def _check_ranges(self) -> None:
        for name, low in (("kernel", 1), ("stride", 1), ("padding", 0),
                          ("out_channels", 1), ("factor", 1), ("height", 1), ("width", 1)):
            val = getattr(self, name)
            if val is None:
                continue
            if not isinstance(val, int) or isinstance(val, bool) or val < low:
                raise ParameterError(f"{self.kind}: {name} must be an integer >= {low}, got {val!r}")
        if self.slope is not None and not (0.0 <= self.slope < 1.0 and math.isfinite(self.slope)):
            raise ParameterError(f"leaky slope must lie in [0, 1), got {self.slope}")
        if self.value is not None and not math.isfinite(self.value):
            raise ParameterError(f"scale value must be finite, got {self.value}")


def _conv(in_c: int, out_c: int, kernel: int, stride: int = 1, padding: int = 0) -> LayerSpec:
    del in_c  # input channels are implied by position; kept for readability at call sites
    return LayerSpec("conv", kernel=kernel, stride=stride, padding=padding, out_channels=out_c)


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable architecture description; construction validates the dim trace."""

    layers: tuple[LayerSpec, ...]
    input_channels: int
    input_height: int
    input_width: int
    mode: str = "empirical"

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        for layer in self.layers:
            if not isinstance(layer, LayerSpec):
                raise ParameterError(f"layers must be LayerSpec values, got {type(layer).__name__}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("input_channels", "input_height", "input_width"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ParameterError(f"{name} must be a positive integer, got {val!r}")
        if self.mode == "analytic":
            bad = [l.kind for l in self.layers if l.kind not in _ANALYTIC_KINDS]
            if bad:
                raise ParameterError(
                    f"analytic mode allows only {_ANALYTIC_KINDS}, found {bad}"
                )
            if not self.layers or self.layers[-1].kind != "conv":
                raise ParameterError("analytic mode requires the final layer to be a conv")
        dim_trace(self)  # raises if any layer does not fit

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return (self.input_channels, self.input_height, self.input_width)

    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]


def dim_trace(spec: NetworkSpec) -> list[tuple[int, int, int]]:
    """Output dims (channels, height, width) after each executed stage.

    In analytic mode one extra trailing entry covers the channel-mean head.
    """
    c, h, w = spec.input_dims
    out: list[tuple[int, int, int]] = []
    for layer in spec.layers:
        if layer.kind == "conv":
            h = T._axis_extent(h, layer.kernel, layer.stride, layer.padding, False)
            w = T._axis_extent(w, layer.kernel, layer.stride, layer.padding, False)
            c = layer.out_channels
        elif layer.kind in _POOL_KINDS:
            h = T._axis_extent(h, layer.kernel, layer.stride, layer.padding, layer.ceil_mode)
            w = T._axis_extent(w, layer.kernel, layer.stride, layer.padding, layer.ceil_mode)
        elif layer.kind == "upsample":
            h, w = h * layer.factor, w * layer.factor
        elif layer.kind == "crop":
            if layer.height > h or layer.width > w:
                raise ShapeError(f"cannot crop {h}x{w} maps to {layer.height}x{layer.width}")
            h, w = layer.height, layer.width
        elif layer.kind == "channel_mean":
            c = 1
        out.append((c, h, w))
    if spec.mode == "analytic":
        out.append((1, h, w))
    return out


def filter_shapes(spec: NetworkSpec) -> list[tuple[int, int]]:
    """Per-conv (filter count, filter length) the spec's bank must carry."""
    c = spec.input_channels
    shapes = []
    for layer, dims in zip(spec.layers, dim_trace(spec)):
        if layer.kind == "conv":
            shapes.append((layer.out_channels, c * layer.kernel * layer.kernel))
        c = dims[0]
    return shapes


@dataclass(frozen=True)
class ForwardTrace:
    """Forward result: final maps, plus per-stage snapshots when requested."""

    output: FeatureMaps
    layers: tuple[FeatureMaps, ...] | None = None


def _check_bank(spec: NetworkSpec, bank: FilterBank) -> None:
    need = filter_shapes(spec)
    have = bank.shapes()
    if need != have:
        raise ShapeError(f"filter bank shapes {have} do not match the spec's {need}")


def forward(
    spec: NetworkSpec, bank: FilterBank, x: FeatureMaps, keep_layers: bool = False
) -> ForwardTrace:
    """Run the network. Conv layers consume bank entries in order.

    Analytic mode executes conv -> relu -> 1/sqrt(N) scale (scale skipped on
    the final conv) and appends the channel-mean head.
    """
    if (x.channels, x.height, x.width) != spec.input_dims:
        raise ShapeError(
            f"input dims {(x.channels, x.height, x.width)} do not match spec {spec.input_dims}"
        )
    _check_bank(spec, bank)
    analytic = spec.mode == "analytic"
    last_conv = spec.layers[-1] if analytic else None
    snaps: list[FeatureMaps] = []
    cur = x
    conv_i = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            p = patch_index(cur.height, cur.width, layer.kernel, layer.stride, layer.padding)
            cur = T.conv_forward(T.extract_patches(cur, p), bank.layers[conv_i])
            conv_i += 1
            if analytic:
                cur = T.relu(cur)
                if layer is not last_conv:
                    cur = T.scale(cur, 1.0 / math.sqrt(layer.out_channels))
        elif layer.kind == "relu":
            cur = T.relu(cur)
        elif layer.kind == "leaky_relu":
            cur = T.leaky_relu(cur, layer.slope)
        elif layer.kind in _POOL_KINDS:
            p = patch_index(cur.height, cur.width, layer.kernel, layer.stride,
                            layer.padding, layer.ceil_mode)
            op = {"max_pool": T.max_pool, "l2_pool": T.l2_pool, "avg_pool": T.avg_pool}[layer.kind]
            cur = op(cur, p)
        elif layer.kind == "upsample":
            cur = T.upsample(cur, layer.factor)
        elif layer.kind == "crop":
            cur = T.crop(cur, layer.height, layer.width)
        elif layer.kind == "channel_mean":
            cur = T.channel_mean(cur)
        elif layer.kind == "scale":
            cur = T.scale(cur, layer.value)
        if keep_layers:
            snaps.append(cur)
    if analytic:
        cur = T.channel_mean(cur)
        if keep_layers:
            snaps.append(cur)
    expect = dim_trace(spec)[-1]
    assert (cur.channels, cur.height, cur.width) == expect
    return ForwardTrace(cur, tuple(snaps) if keep_layers else None)


# ---------------------------------------------------------------------------
# JSON serialization

_JSON_FIELDS = (
    ("kernel", "kernel"),
    ("stride", "stride"),
    ("padding", "pad"),
    ("out_channels", "out"),
    ("slope", "slope"),
    ("factor", "factor"),
    ("height", "height"),
    ("width", "width"),
    ("value", "value"),
)


def network_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        entry: dict = {"kind": layer.kind}
        for attr, key in _JSON_FIELDS:
            val = getattr(layer, attr)
            if val is None:
                continue
            if attr == "padding" and val == 0:
                continue
            entry[key] = val
        if layer.ceil_mode:
            entry["ceil"] = True
        layers.append(entry)
    return {"mode": spec.mode, "input": list(spec.input_dims), "layers": layers}


def network_to_json(spec: NetworkSpec) -> str:
    return json.dumps(network_to_dict(spec), indent=2)


def network_from_dict(doc: dict) -> NetworkSpec:
    if not isinstance(doc, dict):
        raise DataError("network document must be a JSON object")
    unknown = set(doc) - {"mode", "input", "layers"}
    if unknown:
        raise DataError(f"unknown top-level keys {sorted(unknown)}")
    mode = doc.get("mode", "empirical")
    dims = doc.get("input")
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in dims)):
        raise DataError('"input" must be a list [channels, height, width] of integers')
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list):
        raise DataError('"layers" must be a list')
    key_to_attr = {key: attr for attr, key in _JSON_FIELDS}
    layers = []
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise DataError(f"layer {i}: each layer needs a \"kind\"")
        kwargs = {}
        for key, val in entry.items():
            if key == "kind":
                continue
            if key == "ceil":
                kwargs["ceil_mode"] = bool(val)
            elif key in key_to_attr:
                kwargs[key_to_attr[key]] = val
            else:
                raise DataError(f"layer {i}: unknown key {key!r}")
        layers.append(LayerSpec(entry["kind"], **kwargs))
    return NetworkSpec(tuple(layers), dims[0], dims[1], dims[2], mode=mode)


def load_network(path: str | Path) -> NetworkSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read network file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return network_from_dict(doc)


# ---------------------------------------------------------------------------
# Presets

_VGG_BLOCKS = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))
_ALEX_CONVS = ((96, 11, 4, 0), (256, 5, 1, 2), (384, 3, 1, 1), (384, 3, 1, 1), (256, 3, 1, 1))

PRESET_NAMES = tuple(
    [f"vgg16_conv{k}_deconv{k}" for k in range(1, 6)]
    + [f"alexnet_conv{k}_deconv{k}" for k in range(1, 6)]
    + [f"simplified_conv{k}" for k in range(1, 6)]
    + ["rrvgg_conv1_deconv1", "rrvgg_conv1_deconv1_variant", "rrvgg_conv1_1"]
)


def _act_layer(activation: str) -> LayerSpec:
    if activation == "relu":
        return LayerSpec("relu")
    if activation == "leaky_relu":
        return LayerSpec("leaky_relu", slope=0.2)
    raise ParameterError(f"activation must be 'relu' or 'leaky_relu', got {activation!r}")


def _mirror(items: list[tuple], act: LayerSpec) -> list[LayerSpec]:
    """Invert a structural (conv/pool) chain: pools become zero-insertion
    upsampling by their stride, convs swap channel direction and turn
    stride-1 with dim-preserving padding (a strided conv gains an upsample)."""
    out: list[LayerSpec] = []
    for item in reversed(items):
        if item[0] == "pool":
            _, _k, stride, _ceil = item
            out.append(LayerSpec("upsample", factor=stride))
        else:
            _, in_c, out_c, k, s, _p = item
            if s > 1:
                out.append(LayerSpec("upsample", factor=s))
            out.append(_conv(out_c, in_c, k, 1, (k - 1) // 2))
            out.append(act)
    return out


def _vgg_parts(level: int, c_in: int, override: int | None, act: LayerSpec):
    items: list[tuple] = []
    cur = c_in
    for b in range(level):
        width, reps = _VGG_BLOCKS[b]
        if override is not None:
            width = override
        for _ in range(reps):
            items.append(("conv", cur, width, 3, 1, 1))
            cur = width
        if b < level - 1:
            items.append(("pool", 2, 2, True))
    cnn: list[LayerSpec] = []
    for item in items:
        if item[0] == "conv":
            cnn.extend([_conv(item[1], item[2], item[3], item[4], item[5]), act])
        else:
            cnn.append(LayerSpec("max_pool", kernel=item[1], stride=item[2], ceil_mode=True))
    return cnn, _mirror(items, act)


def _alexnet_parts(level: int, c_in: int, override: int | None, act: LayerSpec):
    items: list[tuple] = []
    cur = c_in
    for i in range(level):
        width, k, s, p = _ALEX_CONVS[i]
        if override is not None:
            width = override
        items.append(("conv", cur, width, k, s, p))
        cur = width
        if i in (0, 1) and i < level - 1:
            items.append(("pool", 3, 2, True))
    cnn: list[LayerSpec] = []
    for item in items:
        if item[0] == "conv":
            cnn.extend([_conv(item[1], item[2], item[3], item[4], item[5]), act])
        else:
            cnn.append(LayerSpec("max_pool", kernel=item[1], stride=item[2], ceil_mode=True))
    return cnn, _mirror(items, act)


def _simplified_parts(level: int, c_in: int, override: int | None, act: LayerSpec):
    width, reps = _VGG_BLOCKS[level - 1]
    if override is not None:
        width = override
    cnn: list[LayerSpec] = [_conv(c_in, width, 3, 1, 1), act]
    for _ in range(reps - 1):
        cnn.extend([_conv(width, width, 3, 1, 1), act])
    dcn: list[LayerSpec] = []
    for _ in range(reps - 1):
        dcn.extend([_conv(width, width, 3, 1, 1), act])
    dcn.extend([_conv(width, c_in, 3, 1, 1), act])
    return cnn, dcn


def build_preset_parts(
    name: str,
    input_dims: tuple[int, int, int],
    channel_override: int | None = None,
    kernel: int | None = None,
    activation: str | None = None,
) -> tuple[NetworkSpec, NetworkSpec]:
    """Build a preset as a (cnn, dcn) pair of empirical NetworkSpecs.

    The cnn half ends at the named representation (pre-pool for the VGG and
    AlexNet levels); the dcn half mirrors it back and crops to the input
    size, or to its natural output size when zero-insertion upsampling
    cannot reach the input size (the AlexNet presets).
    """
    c, h, w = input_dims
    if channel_override is not None and channel_override < 1:
        raise ParameterError(f"channel override must be positive, got {channel_override}")
    m_vgg = re.fullmatch(r"vgg16_conv([1-5])_deconv([1-5])", name)
    m_alex = re.fullmatch(r"alexnet_conv([1-5])_deconv([1-5])", name)
    m_simp = re.fullmatch(r"simplified_conv([1-5])", name)
    is_rr = name in ("rrvgg_conv1_deconv1", "rrvgg_conv1_deconv1_variant", "rrvgg_conv1_1")
    if not (m_vgg or m_alex or m_simp or is_rr):
        raise ParameterError(f"unknown preset {name!r}; valid names: {', '.join(PRESET_NAMES)}")
    if kernel is not None and name != "rrvgg_conv1_1":
        raise ParameterError(f"preset {name} does not take a kernel size")

    default_act = "leaky_relu" if (m_vgg or m_alex) else "relu"
    act = _act_layer(activation or default_act)

    if m_vgg or m_alex:
        levels = (int(m_vgg.group(1)), int(m_vgg.group(2))) if m_vgg else \
                 (int(m_alex.group(1)), int(m_alex.group(2)))
        if levels[0] != levels[1]:
            raise ParameterError(f"preset {name}: conv and deconv levels must match")
        parts = _vgg_parts if m_vgg else _alexnet_parts
        cnn_layers, dcn_layers = parts(levels[0], c, channel_override, act)
    elif m_simp:
        cnn_layers, dcn_layers = _simplified_parts(int(m_simp.group(1)), c, channel_override, act)
    elif name == "rrvgg_conv1_1":
        k = 3 if kernel is None else kernel
        if k < 1 or k % 2 == 0:
            raise ParameterError(f"rrvgg_conv1_1 needs an odd kernel size, got {k}")
        width = channel_override or 64
        cnn_layers = [_conv(c, width, k, 1, (k - 1) // 2), act]
        dcn_layers = [_conv(width, c, k, 1, (k - 1) // 2), act]
    else:
        width = channel_override or 64
        cnn_layers = [
            _conv(c, width, 3, 1, 1), act,
            _conv(width, width, 3, 1, 1), act,
            LayerSpec("max_pool", kernel=2, stride=2, ceil_mode=True),
        ]
        dcn_layers = [LayerSpec("upsample", factor=2), _conv(width, width, 3, 1, 1), act]
        if name == "rrvgg_conv1_deconv1_variant":
            dcn_layers.append(LayerSpec("channel_mean"))
        else:
            dcn_layers.extend([_conv(width, c, 3, 1, 1), act])

    cnn = NetworkSpec(tuple(cnn_layers), c, h, w)
    mid_c, mid_h, mid_w = dim_trace(cnn)[-1]
    pre = NetworkSpec(tuple(dcn_layers), mid_c, mid_h, mid_w)
    out_c, out_h, out_w = dim_trace(pre)[-1]
    dcn_layers.append(LayerSpec("crop", height=min(out_h, h), width=min(out_w, w)))
    dcn = NetworkSpec(tuple(dcn_layers), mid_c, mid_h, mid_w)
    del out_c
    return cnn, dcn


def build_preset(
    name: str,
    input_dims: tuple[int, int, int],
    channel_override: int | None = None,
    kernel: int | None = None,
    activation: str | None = None,
) -> NetworkSpec:
    """The full CNN-DCN chain of a preset as one empirical NetworkSpec."""
    cnn, dcn = build_preset_parts(name, input_dims, channel_override, kernel, activation)
    return NetworkSpec(cnn.layers + dcn.layers, *input_dims)


def with_uniform_channels(spec: NetworkSpec, n: int | list[int]) -> NetworkSpec:
    """Copy of spec with every conv's output channel count replaced; a
    single integer applies to all convs, a list sets them layer by layer."""
    convs = spec.conv_layers()
    if isinstance(n, int):
        counts = [n] * len(convs)
    else:
        counts = list(n)
        if len(counts) != len(convs):
            raise ParameterError(
                f"{len(counts)} channel counts for {len(convs)} conv layers"
            )
    new_layers = []
    it = iter(counts)
    for layer in spec.layers:
        if layer.kind == "conv":
            new_layers.append(replace(layer, out_channels=next(it)))
        else:
            new_layers.append(layer)
    return NetworkSpec(tuple(new_layers), *spec.input_dims, mode=spec.mode)


def zero_input(spec: NetworkSpec) -> FeatureMaps:
    """All-zero maps matching the spec's input dims (handy in tests)."""
    c, h, w = spec.input_dims
    return FeatureMaps(np.zeros((c, h * w)), h, w)
