"""Closed-form wide-width limits and deviation bounds for analytic nets.

An analytic net (see `network`) applies random-filter convs with ReLU and
1/sqrt(N) scaling, l2 or average pooling, zero-insertion upsampling, and a
final channel mean. As every width N_i grows, its output concentrates on a
deterministic limit image f*. This module computes f* and the structure
around it without any sampling:

* convergence_field_l2: f* for l2-pooling nets via a per-pixel energy
  recurrence. With k_m the rectified-projection moments of the filter law,
  a conv turns per-pixel squared norms s into k2 * (window sum of s), an
  l2 pool turns them into plain window sums, and upsampling scatters them;
  the final conv gives f* = k1 * sqrt(window sum of s).
* compute_route_counts: exact integer counts n(l, i) of monotone paths from
  input pixel l to output pixel i through the window structure. They give
  the closed form f*_i = k * sqrt(sum_l n(l, i) |X_l|^2) that cross-checks
  the recurrence.
* convergence_field_avg: the same limit for average-pooling nets, tracked
  through the full pixel Gram matrix, using the angular kernel
  h(theta) = ((pi - theta) cos theta + sin theta) / pi.
* variance_bound_two_layer / variance_bound_multilayer: high-probability
  bounds on sin(angle(output, f*)) at finite widths.
* cosine_bound: a lower bound on cos(angle(f*, X)) for positive inputs in
  terms of how far X sits from its local receptive-field means.
* mc_verify: Monte-Carlo trials of a finite-width net against f* and the
  applicable deviation bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distributions import (
    DistributionSpec,
    Moments,
    angular_kernel,
    derive_seed,
    moments as dist_moments,
    sample_filterbank,
)
from .errors import (
    AssumptionError,
    DegenerateInputError,
    IsotropyError,
    ParameterError,
    ShapeError,
    WrongVariantError,
)
from .network import LayerSpec, NetworkSpec, filter_shapes, forward, with_uniform_channels
from .tensors import FeatureMaps, PatchIndex, patch_index


# ---------------------------------------------------------------------------
# result types

@dataclass(frozen=True)
class ConvergenceField:
    """The wide-width limit of an analytic net on one fixed input.

    z_star_per_layer[i] holds the patched norms entering stage i (for an
    upsample stage, the per-pixel norms). f_star is the flat limit image,
    k the accumulated moment constant, and z_star = f_star / k, which for
    l2 nets equals the route-count closed form.
    """

    z_star_per_layer: tuple[np.ndarray, ...]
    k: float
    z_star: np.ndarray
    f_star: np.ndarray
    out_height: int
    out_width: int

    def f_star_maps(self) -> FeatureMaps:
        return FeatureMaps(self.f_star[None, :], self.out_height, self.out_width)


@dataclass(frozen=True)
class RouteCountMap:
    """counts[l, i] = number of window routes from input pixel l to output
    pixel i; receptive_sets[i] lists the l with at least one route."""

    counts: np.ndarray
    receptive_sets: tuple[np.ndarray, ...]
    out_height: int
    out_width: int

    @property
    def in_pixels(self) -> int:
        return self.counts.shape[0]

    @property
    def out_pixels(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class GramField:
    """Pixel Gram matrices along an average-pooling analytic net.

    grams[i] is the Gram of the maps entering stage i; the final entry is
    the per-channel-averaged Gram of the last conv's output. dims gives the
    pixel grid of each entry.
    """

    grams: tuple[np.ndarray, ...]
    dims: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class BoundReport:
    """One evaluated bound: its value, optional empirical counterpart, and
    every parameter needed to recompute it."""

    kind: str
    bound_value: float
    empirical: float | None
    holds: bool | None
    params: dict


# ---------------------------------------------------------------------------
# shared machinery

@dataclass(frozen=True)
class _Stage:
    kind: str
    index: PatchIndex | None
    place: np.ndarray | None
    in_pixels: int
    out_pixels: int
    out_height: int
    out_width: int


def _require_analytic(spec: NetworkSpec) -> None:
    if spec.mode != "analytic":
        raise ParameterError("closed-form limits are defined for analytic-mode nets only")


def _stages(spec: NetworkSpec) -> list[_Stage]:
    h, w = spec.input_height, spec.input_width
    stages = []
    for layer in spec.layers:
        if layer.kind in ("conv", "l2_pool", "avg_pool"):
            p = patch_index(h, w, layer.kernel, layer.stride, layer.padding,
                            layer.kind != "conv" and layer.ceil_mode)
            stages.append(_Stage(layer.kind, p, None, h * w, p.patch_count,
                                 p.out_height, p.out_width))
            h, w = p.out_height, p.out_width
        else:  # upsample
            f = layer.factor
            oh, ow = h * f, w * f
            place = (np.arange(h)[:, None] * f * ow + np.arange(w)[None, :] * f).ravel()
            stages.append(_Stage("upsample", None, place, h * w, oh * ow, oh, ow))
            h, w = oh, ow
    return stages


def _per_conv_moments(spec: NetworkSpec, moms: Moments | Sequence[Moments]) -> list[Moments]:
    n_convs = len(spec.conv_layers())
    if isinstance(moms, Moments):
        out = [moms] * n_convs
    else:
        out = list(moms)
        if len(out) != n_convs:
            raise ParameterError(f"{len(out)} moment sets for {n_convs} conv layers")
    for m in out:
        if m.family != "gaussian":
            raise IsotropyError(
                "closed-form limits need a rotation-invariant filter law; "
                f"got family {m.family!r}"
            )
    return out


def _window_sum(values: np.ndarray, p: PatchIndex) -> np.ndarray:
    """Sum `values` (per input pixel, extra axes allowed) over each window;
    out-of-range slots contribute exact zeros. Preserves dtype."""
    v = np.asarray(values)
    if v.shape[0] != p.in_pixels:
        raise ShapeError(f"{v.shape[0]} values for {p.in_pixels} pixels")
    ext = np.concatenate([v, np.zeros((1,) + v.shape[1:], dtype=v.dtype)], axis=0)
    idx = np.where(p.slots < 0, v.shape[0], p.slots)
    return ext[idx].sum(axis=1)


def _check_input(spec: NetworkSpec, x: FeatureMaps) -> None:
    if (x.channels, x.height, x.width) != spec.input_dims:
        raise ShapeError(
            f"input dims {(x.channels, x.height, x.width)} do not match spec {spec.input_dims}"
        )


def cos_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two flat vectors (clamped to [-1, 1])."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("angle with a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def sin_angle(a: np.ndarray, b: np.ndarray) -> float:
    c = cos_angle(a, b)
    return math.sqrt(max(0.0, 1.0 - c * c))


# ---------------------------------------------------------------------------
# l2 variant: energy recurrence and route counts

def convergence_field_l2(
    spec: NetworkSpec, moms: Moments | Sequence[Moments], x: FeatureMaps
) -> ConvergenceField:
    """Closed-form limit image of an l2-pooling analytic net on input x."""
    _require_analytic(spec)
    if any(l.kind == "avg_pool" for l in spec.layers):
        raise WrongVariantError(
            "net uses average pooling; use convergence_field_avg for it"
        )
    _check_input(spec, x)
    per_conv = _per_conv_moments(spec, moms)
    stages = _stages(spec)

    s = (x.data * x.data).sum(axis=0)  # squared channel norm per pixel
    z_list: list[np.ndarray] = []
    conv_i = 0
    k2_prod = 1.0
    f_star = z_final = None
    for i, st in enumerate(stages):
        last = i == len(stages) - 1
        if st.kind == "upsample":
            z_list.append(np.sqrt(s))
            nxt = np.zeros(st.out_pixels)
            nxt[st.place] = s
            s = nxt
            continue
        zsq = _window_sum(s, st.index)
        z_list.append(np.sqrt(zsq))
        if st.kind == "l2_pool":
            s = zsq
        elif last:
            m = per_conv[conv_i]
            z_final = np.sqrt(zsq)
            f_star = m.k1 * z_final
        else:
            m = per_conv[conv_i]
            conv_i += 1
            k2_prod *= m.k2
            s = m.k2 * zsq

    # zsq carries one k2 factor per hidden conv, so the pure route-count
    # field is recovered by dividing sqrt(prod k2) out of z_final; the
    # factored constant k then satisfies f_star = k * z_star exactly.
    root_k2 = math.sqrt(k2_prod)
    st_last = stages[-1]
    return ConvergenceField(
        z_star_per_layer=tuple(z_list),
        k=float(per_conv[-1].k1 * root_k2),
        z_star=z_final / root_k2,
        f_star=f_star,
        out_height=st_last.out_height,
        out_width=st_last.out_width,
    )


def compute_route_counts(spec: NetworkSpec) -> RouteCountMap:
    """Exact integer route counts from every input pixel to every output pixel."""
    _require_analytic(spec)
    stages = _stages(spec)
    d0 = spec.input_height * spec.input_width
    mat = np.eye(d0, dtype=np.int64)
    for st in stages:
        if st.kind == "upsample":
            nxt = np.zeros((st.out_pixels, d0), dtype=np.int64)
            nxt[st.place] = mat
            mat = nxt
        else:
            mat = _window_sum(mat, st.index)
    counts = np.ascontiguousarray(mat.T)
    counts.flags.writeable = False
    sets = tuple(np.flatnonzero(counts[:, i]) for i in range(counts.shape[1]))
    last = stages[-1]
    return RouteCountMap(counts, sets, last.out_height, last.out_width)


def route_form_z_star(rc: RouteCountMap, x: FeatureMaps) -> np.ndarray:
    """The closed form sqrt(sum_l n(l, i) |X_l|^2) implied by route counts."""
    s = (x.data * x.data).sum(axis=0)
    if s.shape[0] != rc.in_pixels:
        raise ShapeError(f"{s.shape[0]} pixels for a {rc.in_pixels}-pixel route map")
    return np.sqrt(s @ rc.counts)


# ---------------------------------------------------------------------------
# average-pooling variant: Gram recurrence

def gram_conv_step(gram: np.ndarray, p: PatchIndex, k2: float) -> np.ndarray:
    """Push a pixel Gram through one normalized conv+ReLU stage.

    With z_j the patched norm of window j and phi_jk the angle between
    windows j and k (slot-aligned inner products, padding as zeros), the
    output Gram is k2 * h(phi_jk) * z_j * z_k; entries with a zero-norm
    window are exactly zero.
    """
    d = gram.shape[0]
    if gram.shape != (d, d):
        raise ShapeError(f"gram must be square, got {gram.shape}")
    if d != p.in_pixels:
        raise ShapeError(f"gram over {d} pixels, index over {p.in_pixels}")
    zsq = _window_sum(np.diagonal(gram).copy(), p)
    z = np.sqrt(np.maximum(zsq, 0.0))
    ext = np.zeros((d + 1, d + 1))
    ext[:d, :d] = gram
    idx = np.where(p.slots < 0, d, p.slots)
    dots = np.zeros((p.patch_count, p.patch_count))
    for s in range(p.slot_count):
        col = idx[:, s]
        dots += ext[np.ix_(col, col)]
    outer = np.outer(z, z)
    safe = np.where(outer > 0.0, outer, 1.0)
    cos = np.clip(dots / safe, -1.0, 1.0)
    out = k2 * angular_kernel(np.arccos(cos)) * outer
    return (out + out.T) / 2.0


def _gram_avg_step(gram: np.ndarray, p: PatchIndex) -> np.ndarray:
    d = gram.shape[0]
    mix = np.zeros((p.patch_count, d + 1))
    rows = np.repeat(np.arange(p.patch_count), p.slot_count)
    idx = np.where(p.slots < 0, d, p.slots).ravel()
    np.add.at(mix, (rows, idx), 1.0 / p.slot_count)
    mix = mix[:, :d]
    out = mix @ gram @ mix.T
    return (out + out.T) / 2.0


def _gram_upsample(gram: np.ndarray, place: np.ndarray, out_pixels: int) -> np.ndarray:
    out = np.zeros((out_pixels, out_pixels))
    out[np.ix_(place, place)] = gram
    return out


def convergence_field_avg(
    spec: NetworkSpec, moms: Moments | Sequence[Moments], x: FeatureMaps
) -> tuple[GramField, ConvergenceField]:
    """Closed-form limit of an average-pooling analytic net, via pixel Grams.

    Returns the Gram chain (one matrix per stage input plus the final
    conv's channel-averaged Gram) and the ConvergenceField built from it.
    """
    _require_analytic(spec)
    if any(l.kind == "l2_pool" for l in spec.layers):
        raise WrongVariantError("net uses l2 pooling; use convergence_field_l2 for it")
    _check_input(spec, x)
    per_conv = _per_conv_moments(spec, moms)
    stages = _stages(spec)

    gram = x.data.T @ x.data
    gram = (gram + gram.T) / 2.0
    grams = [gram]
    dims = [(spec.input_height, spec.input_width)]
    z_list: list[np.ndarray] = []
    conv_i = 0
    k2_prod = 1.0
    f_star = z_final = None
    for i, st in enumerate(stages):
        last = i == len(stages) - 1
        diag = np.diagonal(gram).copy()
        if st.kind == "upsample":
            z_list.append(np.sqrt(np.maximum(diag, 0.0)))
            gram = _gram_upsample(gram, st.place, st.out_pixels)
        elif st.kind == "avg_pool":
            z_list.append(np.sqrt(np.maximum(_window_sum(diag, st.index), 0.0)))
            gram = _gram_avg_step(gram, st.index)
        else:
            m = per_conv[conv_i]
            conv_i += 1
            zsq = np.maximum(_window_sum(diag, st.index), 0.0)
            z_list.append(np.sqrt(zsq))
            if last:
                z_final = np.sqrt(zsq)
                f_star = m.k1 * z_final
            else:
                k2_prod *= m.k2
            gram = gram_conv_step(gram, st.index, m.k2)
        grams.append(gram)
        dims.append((st.out_height, st.out_width))

    st_last = stages[-1]
    field = ConvergenceField(
        z_star_per_layer=tuple(z_list),
        k=float(per_conv[-1].k1 * k2_prod),
        z_star=z_final / k2_prod,
        f_star=f_star,
        out_height=st_last.out_height,
        out_width=st_last.out_width,
    )
    return GramField(tuple(grams), tuple(dims)), field


# ---------------------------------------------------------------------------
# deviation bounds

def _check_delta(delta: float) -> None:
    if not (0.0 < delta < 1.0):
        raise ParameterError(f"failure probability delta must lie in (0, 1), got {delta}")


def variance_bound_two_layer(K1: float, n: int, delta: float) -> BoundReport:
    """With probability 1 - delta, sin(angle(output, f*)) of a single-conv
    net with n filters stays below sqrt(K1 / (n * delta))."""
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
        raise ParameterError(f"filter count must be a positive integer, got {n!r}")
    if not (K1 > 0.0 and math.isfinite(K1)):
        raise ParameterError(f"K1 must be positive and finite, got {K1}")
    _check_delta(delta)
    bound = math.sqrt(K1 / (n * delta))
    return BoundReport(
        kind="deviation_two_layer",
        bound_value=bound,
        empirical=None,
        holds=None,
        params={"K1": K1, "n": n, "delta": delta, "vacuous": bound > 1.0},
    )


def epsilon_operator(x: np.ndarray, p: PatchIndex) -> np.ndarray:
    """Remove each window's mean from a vector, for exactly partitioning
    windows (stride = kernel, no padding, dims divisible); the identity
    |x|^2 = slots * sum(means^2) + |eps(x)|^2 then holds."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"epsilon operates on flat vectors, got {v.ndim}-D")
    if v.shape[0] != p.in_pixels:
        raise ShapeError(f"{v.shape[0]} values for a {p.in_pixels}-pixel index")
    if np.any(p.slots < 0):
        raise AssumptionError("windows include padding slots; exact partition required")
    counts = np.bincount(p.slots.ravel(), minlength=p.in_pixels)
    if p.slots.size != p.in_pixels or np.any(counts != 1):
        raise AssumptionError(
            "windows must tile the grid exactly (stride = kernel, dims divisible)"
        )
    means = v[p.slots].mean(axis=1)
    out = np.empty_like(v)
    out[p.slots] = means[:, None]
    return v - out


def _check_disjoint(p: PatchIndex) -> None:
    inb = p.slots[p.slots >= 0]
    if inb.size and np.bincount(inb, minlength=p.in_pixels).max() > 1:
        raise AssumptionError(
            "windows overlap; the multilayer bound needs at most one route "
            "per input/output pixel pair (stride = kernel)"
        )


def _lambda_from(vec: np.ndarray, p: PatchIndex | None) -> float:
    """Flatness factor 1/sqrt(1 - |eps(v)|^2 / |v|^2); p=None means one
    global patch (plain mean removal)."""
    den = float(vec @ vec)
    if den == 0.0:
        raise DegenerateInputError("zero energy field; flatness factor undefined")
    eps = vec - vec.mean() if p is None else epsilon_operator(vec, p)
    ratio = float(eps @ eps) / den
    if ratio >= 1.0:
        raise DegenerateInputError("window means vanish; flatness factor undefined")
    return 1.0 / math.sqrt(1.0 - ratio)


def variance_bound_multilayer(
    spec: NetworkSpec,
    moms: Moments | Sequence[Moments],
    x: FeatureMaps,
    channel_counts: Sequence[int] | None = None,
    delta: float = 0.1,
) -> BoundReport:
    """High-probability deviation bound for a deep one-route analytic net.

    With L the transition count (structural layers plus the final mean),
    harmonic-style width 1/N-bar averaging the per-layer K/N terms, and
    flatness factors lambda_i of the intermediate energy fields, the bound

        sqrt((L-1)/(N-bar delta)) + sqrt((L-2) sqrt((L-1)/(N-bar delta)) prod lambda_i)

    holds with probability 1 - delta. Pooling and upsampling transitions
    contribute no K/N term (their deviation is exactly zero, so they admit
    a zero share of the failure probability). A single-conv net reproduces
    the two-layer bound.
    """
    _check_delta(delta)
    per_conv = _per_conv_moments(spec, moms)
    field = convergence_field_l2(spec, moms, x)
    stages = _stages(spec)
    for st in stages:
        if st.index is not None:
            _check_disjoint(st.index)

    convs = spec.conv_layers()
    if channel_counts is None:
        counts = [l.out_channels for l in convs]
    else:
        counts = [int(n) for n in channel_counts]
        if len(counts) != len(convs) or any(n < 1 for n in counts):
            raise ParameterError(f"need one positive width per conv layer, got {channel_counts}")

    L = len(stages) + 1
    terms = []
    k2_ratios = []
    conv_i = 0
    for i, st in enumerate(stages):
        if st.kind != "conv":
            continue
        m = per_conv[conv_i]
        n = counts[conv_i]
        conv_i += 1
        if i == len(stages) - 1:
            terms.append(m.K1 / n)
        else:
            terms.append(m.K2 / n)
            k2_ratios.append(m.K2)
    inv_nbar = sum(terms) / (L - 1)
    term1 = math.sqrt((L - 1) * inv_nbar / delta)

    lambdas: list[float] = []
    if L > 2:
        for i in range(len(stages) - 1):
            nxt = stages[i + 1]
            vec = field.z_star_per_layer[i] ** 2
            if nxt.kind == "upsample":
                lambdas.append(1.0)
            else:
                lambdas.append(_lambda_from(vec, nxt.index))
        lambdas.append(_lambda_from(field.z_star_per_layer[-1] ** 2, None))
        lam_prod = math.prod(lambdas)
        bound = term1 + math.sqrt((L - 2) * term1 * lam_prod)
    else:
        bound = term1

    return BoundReport(
        kind="deviation_multilayer",
        bound_value=bound,
        empirical=None,
        holds=None,
        params={
            "L": L,
            "delta": delta,
            "channels": tuple(counts),
            "inv_nbar": inv_nbar,
            "K1_final": per_conv[-1].K1,
            "K2_hidden": tuple(k2_ratios),
            "lambdas": tuple(lambdas),
            "vacuous": bound > 1.0,
        },
    )


# ---------------------------------------------------------------------------
# cosine bound for positive inputs

def cosine_bound(
    x: FeatureMaps | np.ndarray, kernel: int = 3, spec: NetworkSpec | None = None
) -> BoundReport:
    """Lower bound on cos(angle(f*, X)) for a strictly positive image X.

    For stride-1, dim-preserving conv stacks the limit satisfies
    cos(angle) >= 1 - sum_t eps_t X_t / sum_t X_t^2, where eps_t is X_t
    minus the route-count-weighted mean of its receptive field (normalizer
    prod kernel^2, missing border routes counted as zeros). By default a
    single conv of the given odd kernel is used; pass an analytic spec of
    stacked stride-1 convs for the deep version.
    """
    if isinstance(x, FeatureMaps):
        if x.channels != 1:
            raise ShapeError(f"cosine bound takes a single-channel image, got {x.channels}")
        flat, h, w = x.data.ravel(), x.height, x.width
    else:
        g = np.asarray(x, dtype=np.float64)
        if g.ndim != 2:
            raise ShapeError(f"expected a 2-D image, got {g.ndim}-D")
        flat, h, w = g.ravel(), g.shape[0], g.shape[1]
    if not np.all(flat > 0.0):
        raise ParameterError("cosine bound requires strictly positive pixel values")

    if spec is None:
        if kernel < 1 or kernel % 2 == 0:
            raise ParameterError(f"kernel must be odd and positive, got {kernel}")
        spec = NetworkSpec(
            (LayerSpec("conv", kernel=kernel, stride=1,
                       padding=(kernel - 1) // 2, out_channels=1),),
            1, h, w, mode="analytic",
        )
    else:
        _require_analytic(spec)
        if spec.input_dims != (1, h, w):
            raise ShapeError(f"spec input dims {spec.input_dims} do not match image (1, {h}, {w})")
        for l in spec.layers:
            if l.kind != "conv":
                raise AssumptionError("cosine bound covers pure conv stacks only")
            if l.stride != 1 or l.kernel % 2 == 0 or l.padding != (l.kernel - 1) // 2:
                raise AssumptionError(
                    "cosine bound needs stride-1 convs with odd, dim-preserving kernels"
                )

    rc = compute_route_counts(spec)
    if rc.out_pixels != flat.shape[0]:
        raise ShapeError("conv stack does not preserve the pixel grid")
    kernels = [l.kernel for l in spec.layers]
    n_tot = math.prod(k * k for k in kernels)

    weighted_mean = (flat @ rc.counts) / n_tot
    eps = flat - weighted_mean
    mass = float(flat @ flat)
    bound = 1.0 - float(eps @ flat) / mass

    z = np.sqrt((flat * flat) @ rc.counts)
    cos_phi = cos_angle(flat, z)

    return BoundReport(
        kind="cosine_lower",
        bound_value=bound,
        empirical=cos_phi,
        holds=bool(cos_phi >= bound - 1e-9),
        params={
            "kernels": tuple(kernels),
            "n_tot": n_tot,
            "mass": mass,
            "eps_dot_x": float(eps @ flat),
            "mean_abs_eps": float(np.abs(eps).mean()),
        },
    )


# ---------------------------------------------------------------------------
# Monte-Carlo verification

def mc_verify(
    spec: NetworkSpec,
    dist: DistributionSpec,
    x: FeatureMaps,
    n: int | Sequence[int],
    trials: int,
    delta: float,
    seed: int,
) -> list[BoundReport]:
    """Sample finite-width instances of an l2 analytic net and compare each
    output's sin(angle to f*) with the applicable deviation bound.

    Returns one report per trial; bound_value is NaN when no bound applies
    (for example a multilayer net without the one-route structure). A trial
    whose output is exactly zero counts as sin = 1.
    """
    if dist.family != "gaussian":
        raise IsotropyError("Monte-Carlo verification needs gaussian filters")
    if trials < 1:
        raise ParameterError(f"trials must be positive, got {trials}")
    spec_n = with_uniform_channels(spec, n if isinstance(n, int) else list(n))
    mom = dist_moments(dist)
    field = convergence_field_l2(spec_n, mom, x)
    if float(np.linalg.norm(field.f_star)) == 0.0:
        raise DegenerateInputError("limit image is zero; angles are undefined")

    if len(spec_n.layers) == 1:
        bound_rep = variance_bound_two_layer(
            mom.K1, spec_n.layers[0].out_channels, delta)
    else:
        try:
            bound_rep = variance_bound_multilayer(spec_n, mom, x, delta=delta)
        except (AssumptionError, DegenerateInputError):
            bound_rep = None
    bound = bound_rep.bound_value if bound_rep is not None else float("nan")

    shapes = filter_shapes(spec_n)
    widths = tuple(l.out_channels for l in spec_n.conv_layers())
    reports = []
    for t in range(trials):
        bank = sample_filterbank(dist, shapes, derive_seed(seed, t))
        out = forward(spec_n, bank, x).output.data.ravel()
        if float(np.linalg.norm(out)) == 0.0:
            sin = 1.0
        else:
            sin = sin_angle(out, field.f_star)
        reports.append(BoundReport(
            kind="mc_trial",
            bound_value=bound,
            empirical=sin,
            holds=bool(sin <= bound) if bound_rep is not None else None,
            params={"trial": t, "widths": widths, "delta": delta, "seed": seed},
        ))
    return reports
