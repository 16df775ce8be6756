"""Command-line harness.

Subcommands: reconstruct, sweep-channels, sweep-kernel, verify (converge-l2,
converge-avg, variance, cosine), train-dcn, metrics, gen-data. Global flags
--seed/--out/--threads apply after the subcommand name. Exit codes: 0 ok,
1 usage error, 2 data error (unreadable or malformed inputs), 3 a
verification gate failed. All CSV output is byte-deterministic for a fixed
seed; floats print with 17 significant digits.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .distributions import (
    DOMAIN_SYNTH,
    DistributionSpec,
    FAMILIES,
    moments,
    sample_filterbank,
    substream,
)
from .errors import RandconvError, VerificationError
from .images import load_image, load_image_dir, save_image, write_synthetic
from .metrics import pearson, ssim_reported, to_gray
from .network import (
    LayerSpec,
    NetworkSpec,
    build_preset,
    build_preset_parts,
    dim_trace,
    filter_shapes,
    forward,
    load_network,
    PRESET_NAMES,
)
from .sweeps import (
    normalize_for_display,
    score_reconstruction,
    sweep_channels,
    sweep_kernel,
    write_sweep_csv,
)
from .tensors import FeatureMaps, crop
from .theory import (
    compute_route_counts,
    convergence_field_avg,
    convergence_field_l2,
    cos_angle,
    cosine_bound,
    mc_verify,
    route_form_z_star,
)
from .training import (
    TrainConfig,
    save_checkpoint,
    train_dcn,
    write_history_csv,
)


class _Parser(argparse.ArgumentParser):
    """argparse, but flag problems exit with code 1 on stderr."""

    def error(self, message):  # noqa: D102
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _dist_arg(text: str) -> DistributionSpec:
    try:
        family, _, scale = text.partition(":")
        return DistributionSpec(family, float(scale) if scale else 0.1)
    except (ValueError, RandconvError) as exc:
        raise argparse.ArgumentTypeError(
            f"expected FAMILY[:SCALE] with family in {FAMILIES}, got {text!r} ({exc})"
        ) from exc


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return vals


def _common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed (default 0)")
    sub.add_argument("--out", type=Path, default=Path("."), help="output directory (default .)")
    sub.add_argument("--threads", type=int, default=1, help="worker threads for sweeps (default 1)")


def _echo_trace(spec: NetworkSpec) -> None:
    print(f"input: {spec.input_channels}x{spec.input_height}x{spec.input_width}", file=sys.stderr)
    kinds = [l.kind for l in spec.layers]
    if spec.mode == "analytic":
        kinds.append("channel_mean")
    for kind, (c, h, w) in zip(kinds, dim_trace(spec)):
        print(f"  {kind}: {c}x{h}x{w}", file=sys.stderr)


def _load_spec(args, dims) -> NetworkSpec:
    if args.net is not None:
        return load_network(args.net)
    return build_preset(
        args.preset, dims,
        channel_override=args.channels, kernel=args.kernel, activation=args.activation,
    )


def _write(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_reconstruct(args) -> int:
    image = load_image(args.image)
    spec = _load_spec(args, (image.channels, image.height, image.width))
    _echo_trace(spec)
    bank = sample_filterbank(args.dist, filter_shapes(spec), args.seed)
    out = forward(spec, bank, image).output
    shown = normalize_for_display(out)

    args.out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    save_image(args.out / f"{stem}_recon.png", shown)

    ref, rec = image, out
    if (rec.height, rec.width) != (ref.height, ref.width):
        h, w = min(ref.height, rec.height), min(ref.width, rec.width)
        ref, rec = crop(ref, h, w), crop(rec, h, w)
    ssim, corr = score_reconstruction(ref, rec)
    print(f"pearson={_fmt(corr)} ssim={_fmt(ssim)}")
    return 0


def _cmd_sweep_channels(args) -> int:
    images = load_image_dir(args.images)
    result = sweep_channels(
        args.channels, args.nets, images, variant=args.variant,
        dist=args.dist, activation=args.activation, seed=args.seed, threads=args.threads,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(result, args.out / "sweep_channels_raw.csv", args.out / "sweep_channels_agg.csv")
    for a in result.aggregates:
        print(f"channels={a.sweep_param} ssim_mean={_fmt(a.ssim_mean)} ssim_std={_fmt(a.ssim_std)} "
              f"corr_mean={_fmt(a.corr_mean)} corr_std={_fmt(a.corr_std)}")
    return 0


def _cmd_sweep_kernel(args) -> int:
    images = load_image_dir(args.images)
    result = sweep_kernel(
        args.kernels, args.nets, images, channels=args.channels,
        dist=args.dist, activation=args.activation, seed=args.seed, threads=args.threads,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(result, args.out / "sweep_kernel_raw.csv", args.out / "sweep_kernel_agg.csv")
    for a in result.aggregates:
        print(f"kernel={a.sweep_param} ssim_mean={_fmt(a.ssim_mean)} ssim_std={_fmt(a.ssim_std)} "
              f"corr_mean={_fmt(a.corr_mean)} corr_std={_fmt(a.corr_std)}")
    return 0


def _verify_input(args, dims: tuple[int, int, int]) -> FeatureMaps:
    """A supplied image, or a deterministic positive random one at dims."""
    if getattr(args, "image", None):
        return load_image(args.image)
    c, h, w = dims
    rng = substream(args.seed, DOMAIN_SYNTH, b=0xFACE)
    return FeatureMaps(rng.random((c, h * w)) + 0.1, h, w)


def _default_l2_net(size: int, n: int) -> NetworkSpec:
    return NetworkSpec(
        (
            LayerSpec("conv", kernel=2, stride=2, out_channels=n),
            LayerSpec("l2_pool", kernel=2, stride=2),
            LayerSpec("conv", kernel=2, stride=2, out_channels=n),
        ),
        1, size, size, mode="analytic",
    )


def _cmd_verify_converge_l2(args) -> int:
    from .network import with_uniform_channels

    base = load_network(args.net) if args.net else _default_l2_net(args.size, args.n[0])
    x = _verify_input(args, base.input_dims)
    dist = DistributionSpec("gaussian", args.sigma)
    mom = moments(dist)
    trial_lines = ["n,trial,sin_theta"]
    summary_lines = ["n,trials,angle_mean_deg,median_sin_theta,cross_check_max_rel_err"]
    worst_err = 0.0
    for n in args.n:
        spec = with_uniform_channels(base, n)
        field = convergence_field_l2(spec, mom, x)
        routes = route_form_z_star(compute_route_counts(spec), x)
        ref = float(np.linalg.norm(field.z_star))
        err = float(np.linalg.norm(field.z_star - routes)) / ref if ref else 0.0
        worst_err = max(worst_err, err)

        reports = mc_verify(spec, dist, x, n, args.trials, 0.5, args.seed)
        sins = [r.empirical for r in reports]
        mean_out = np.zeros_like(field.f_star)
        from .distributions import derive_seed
        for t in range(args.trials):
            bank = sample_filterbank(dist, filter_shapes(spec), derive_seed(args.seed, t))
            mean_out += forward(spec, bank, x).output.data.ravel()
        mean_out /= args.trials
        angle = math.degrees(math.acos(cos_angle(mean_out, field.f_star)))
        for t, s in enumerate(sins):
            trial_lines.append(f"{n},{t},{_fmt(s)}")
        summary_lines.append(
            f"{n},{args.trials},{_fmt(angle)},{_fmt(float(np.median(sins)))},{_fmt(err)}"
        )
        print(f"n={n} angle_of_mean_deg={_fmt(angle)} median_sin={_fmt(float(np.median(sins)))} "
              f"route_check_rel_err={_fmt(err)}")
    _write(args.out / "converge_l2_trials.csv", trial_lines)
    _write(args.out / "converge_l2_summary.csv", summary_lines)
    if worst_err > 1e-12:
        raise VerificationError(
            f"route-count closed form disagrees with the recurrence (rel err {worst_err:.3e})"
        )
    return 0


def _cmd_verify_converge_avg(args) -> int:
    spec = load_network(args.net) if args.net else NetworkSpec(
        (LayerSpec("conv", kernel=3, stride=1, padding=1, out_channels=args.n),),
        1, args.size, args.size, mode="analytic",
    )
    x = _verify_input(args, spec.input_dims)
    dist = DistributionSpec("gaussian", args.sigma)
    mom = moments(dist)
    gram_field, field = convergence_field_avg(spec, mom, x)
    analytic = gram_field.grams[-1]

    # empirical mean Gram of the final conv's maps over many sampled channels
    from .distributions import derive_seed
    from .tensors import extract_patches, patch_index

    if len(spec.layers) > 1:
        raise VerificationError("converge-avg checks single-conv nets; pass a 1-layer --net")
    final = spec.layers[-1]
    p = patch_index(x.height, x.width, final.kernel, final.stride, final.padding)
    patched = extract_patches(x, p)
    mc = args.gram_channels
    rng = substream(args.seed, DOMAIN_SYNTH, b=0xABCD)
    w = rng.normal(0.0, dist.scale, (mc, patched.data.shape[0]))
    feats = np.maximum(w @ patched.data, 0.0)
    emp = feats.T @ feats / mc
    # per-entry MC standard error from the second moment of the products
    sq = feats * feats
    second = sq.T @ sq / mc
    var = np.maximum(second - emp * emp, 0.0) * (mc / (mc - 1.0))
    se = np.sqrt(var / mc)
    diff = np.abs(emp - analytic)
    outside = int((diff > 3.0 * se + 1e-12).sum())

    mean_out = np.zeros_like(field.f_star)
    for t in range(args.trials):
        bank = sample_filterbank(dist, filter_shapes(spec), derive_seed(args.seed, t))
        mean_out += forward(spec, bank, x).output.data.ravel()
    mean_out /= args.trials
    angle = math.degrees(math.acos(cos_angle(mean_out, field.f_star)))

    lines = ["row,col,analytic,empirical,stderr,within_3se"]
    d = analytic.shape[0]
    for i in range(d):
        for j in range(d):
            ok = diff[i, j] <= 3.0 * se[i, j] + 1e-12
            lines.append(f"{i},{j},{_fmt(analytic[i, j])},{_fmt(emp[i, j])},{_fmt(se[i, j])},{int(ok)}")
    _write(args.out / "converge_avg_gram.csv", lines)
    _write(args.out / "converge_avg_summary.csv", [
        "gram_channels,entries,entries_outside_3se,max_abs_err,n,trials,angle_mean_deg",
        f"{mc},{d * d},{outside},{_fmt(float(diff.max()))},{args.n},{args.trials},{_fmt(angle)}",
    ])
    print(f"gram entries outside 3 SE: {outside}/{d * d}; angle_of_mean_deg={_fmt(angle)}")
    if outside:
        raise VerificationError(f"{outside} Gram entries beyond 3 Monte-Carlo standard errors")
    if angle > args.max_angle:
        raise VerificationError(f"mean output angle {angle:.3f} deg exceeds {args.max_angle}")
    return 0


def _cmd_verify_variance(args) -> int:
    spec = load_network(args.net) if args.net else NetworkSpec(
        (LayerSpec("conv", kernel=3, stride=1, padding=1, out_channels=args.n[0]),),
        1, args.size, args.size, mode="analytic",
    )
    x = _verify_input(args, spec.input_dims)
    dist = DistributionSpec("gaussian", args.sigma)
    trial_lines = ["n,trial,sin_theta,bound,holds"]
    summary_lines = ["n,bound,trials,violations,violation_fraction,median_sin_theta"]
    bad = []
    for n in args.n:
        reports = mc_verify(spec, dist, x, n, args.trials, args.delta, args.seed)
        sins = np.array([r.empirical for r in reports])
        bound = reports[0].bound_value
        violations = int((sins > bound).sum()) if math.isfinite(bound) else 0
        fraction = violations / len(sins)
        for r in reports:
            trial_lines.append(
                f"{n},{r.params['trial']},{_fmt(r.empirical)},{_fmt(r.bound_value)},"
                f"{'' if r.holds is None else int(r.holds)}"
            )
        summary_lines.append(
            f"{n},{_fmt(bound)},{len(sins)},{violations},{_fmt(fraction)},{_fmt(float(np.median(sins)))}"
        )
        print(f"n={n} bound={_fmt(bound)} violation_fraction={_fmt(fraction)} "
              f"median_sin={_fmt(float(np.median(sins)))}")
        if math.isfinite(bound) and fraction > args.delta:
            bad.append((n, fraction))
    _write(args.out / "variance_trials.csv", trial_lines)
    _write(args.out / "variance_summary.csv", summary_lines)
    if bad:
        raise VerificationError(
            "violation fraction exceeds delta at " +
            ", ".join(f"n={n} ({f:.3f})" for n, f in bad)
        )
    return 0


def _lift_positive(img: FeatureMaps) -> np.ndarray:
    gray = to_gray(img).values
    return gray * (254.0 / 255.0) + 1.0 / 255.0


def _cmd_verify_cosine(args) -> int:
    if args.images:
        images = load_image_dir(args.images)
    else:
        images = [(Path(args.image).stem, load_image(args.image))]
    lines = ["image_id,bound,cos_phi,slack,holds"]
    failures = []
    for image_id, img in images:
        rep = cosine_bound(_lift_positive(img), kernel=args.kernel)
        slack = rep.empirical - rep.bound_value
        lines.append(
            f"{image_id},{_fmt(rep.bound_value)},{_fmt(rep.empirical)},{_fmt(slack)},{int(rep.holds)}"
        )
        if not rep.holds:
            failures.append(image_id)
    _write(args.out / "cosine_bounds.csv", lines)
    print(f"checked {len(images)} images, {len(failures)} bound failures")
    if failures:
        raise VerificationError(f"cosine bound failed on: {', '.join(failures)}")
    return 0


def _cmd_verify(args) -> int:
    return args.verify_func(args)


def _cmd_train_dcn(args) -> int:
    images = [img for _, img in load_image_dir(args.images)]
    dims = (images[0].channels, images[0].height, images[0].width)
    if args.cnn or args.dcn:
        if not (args.cnn and args.dcn):
            from .errors import ParameterError
            raise ParameterError("--cnn and --dcn must be given together")
        cnn_spec, dcn_spec = load_network(args.cnn), load_network(args.dcn)
    else:
        cnn_spec, dcn_spec = build_preset_parts(
            args.preset, dims, channel_override=args.channels, activation=args.activation
        )
    bank = sample_filterbank(args.dist, filter_shapes(cnn_spec), args.seed)
    milestones = tuple(args.milestones) if args.milestones else None
    config = TrainConfig(
        lr0=args.lr, weight_decay=args.weight_decay, batch_size=args.batch,
        milestones=milestones, lr_decay=args.decay, max_iters=args.iters,
        checkpoint_every=args.checkpoint_every, seed=args.seed,
    )
    params, history = train_dcn(cnn_spec, bank, dcn_spec, images, config)
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "dcn_checkpoint.bin", params)
    write_history_csv(args.out / "train_history.csv", history)
    print(f"final_loss={_fmt(history[-1][2])}")
    return 0


def _cmd_metrics(args) -> int:
    a, b = load_image(args.a), load_image(args.b)
    ga, gb = to_gray(a), to_gray(b)
    print(f"pearson={_fmt(pearson(ga, gb))} ssim={_fmt(ssim_reported(ga, gb))}")
    return 0


def _cmd_gen_data(args) -> int:
    paths = write_synthetic(args.out, args.count, args.size, args.smoothness, args.seed)
    print(f"wrote {len(paths)} images to {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser assembly

def _build_parser() -> _Parser:
    parser = _Parser(prog="randconv", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("reconstruct", help="push one image through a random net")
    _common(p)
    p.add_argument("--image", required=True, type=Path)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--net", type=Path, help="network JSON file")
    source.add_argument("--preset", choices=PRESET_NAMES, help="preset name instead of --net")
    p.add_argument("--channels", type=int, help="uniform channel override for presets")
    p.add_argument("--kernel", type=int, help="kernel size (rrvgg_conv1_1 preset)")
    p.add_argument("--activation", choices=("relu", "leaky_relu"))
    p.add_argument("--dist", type=_dist_arg, default=DistributionSpec("gaussian", 0.1),
                   metavar="FAMILY[:SCALE]", help="filter law (default gaussian:0.1)")
    p.set_defaults(func=_cmd_reconstruct)

    p = subs.add_parser("sweep-channels", help="reconstruction quality vs channel count")
    _common(p)
    p.add_argument("--channels", type=_int_list, default=[4, 16, 64, 256])
    p.add_argument("--nets", type=int, default=10)
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--variant", action="store_true", help="channel-mean output head")
    p.add_argument("--activation", choices=("relu", "leaky_relu"))
    p.add_argument("--dist", type=_dist_arg, default=DistributionSpec("gaussian", 0.1),
                   metavar="FAMILY[:SCALE]")
    p.set_defaults(func=_cmd_sweep_channels)

    p = subs.add_parser("sweep-kernel", help="reconstruction quality vs kernel size")
    _common(p)
    p.add_argument("--kernels", type=_int_list, default=[3, 7, 11, 15])
    p.add_argument("--nets", type=int, default=10)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--activation", choices=("relu", "leaky_relu"))
    p.add_argument("--dist", type=_dist_arg, default=DistributionSpec("gaussian", 0.1),
                   metavar="FAMILY[:SCALE]")
    p.set_defaults(func=_cmd_sweep_kernel)

    p = subs.add_parser("verify", help="check closed forms and bounds by Monte Carlo")
    vsubs = p.add_subparsers(dest="check", required=True, parser_class=_Parser)

    v = vsubs.add_parser("converge-l2", help="limit image of an l2-pooling net")
    _common(v)
    v.add_argument("--size", type=int, default=16)
    v.add_argument("--image", type=Path)
    v.add_argument("--net", type=Path)
    v.add_argument("--sigma", type=float, default=0.1)
    v.add_argument("--n", type=_int_list, default=[2048])
    v.add_argument("--trials", type=int, default=20)
    v.set_defaults(func=_cmd_verify, verify_func=_cmd_verify_converge_l2)

    v = vsubs.add_parser("converge-avg", help="Gram limit of an averaging net")
    _common(v)
    v.add_argument("--size", type=int, default=4)
    v.add_argument("--image", type=Path)
    v.add_argument("--net", type=Path)
    v.add_argument("--sigma", type=float, default=0.1)
    v.add_argument("--gram-channels", type=int, default=100000)
    v.add_argument("--n", type=int, default=2048)
    v.add_argument("--trials", type=int, default=20)
    v.add_argument("--max-angle", type=float, default=2.0)
    v.set_defaults(func=_cmd_verify, verify_func=_cmd_verify_converge_avg)

    v = vsubs.add_parser("variance", help="deviation bound violation rate")
    _common(v)
    v.add_argument("--size", type=int, default=16)
    v.add_argument("--image", type=Path)
    v.add_argument("--net", type=Path)
    v.add_argument("--sigma", type=float, default=0.1)
    v.add_argument("--n", type=_int_list, default=[64, 256, 1024])
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--delta", type=float, default=0.1)
    v.set_defaults(func=_cmd_verify, verify_func=_cmd_verify_variance)

    v = vsubs.add_parser("cosine", help="cosine lower bound on positive images")
    _common(v)
    group = v.add_mutually_exclusive_group(required=True)
    group.add_argument("--images", type=Path)
    group.add_argument("--image", type=Path)
    v.add_argument("--kernel", type=int, default=3)
    v.set_defaults(func=_cmd_verify, verify_func=_cmd_verify_cosine)

    p = subs.add_parser("train-dcn", help="train an inversion DCN against a frozen CNN")
    _common(p)
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--preset", choices=PRESET_NAMES, default="rrvgg_conv1_deconv1")
    p.add_argument("--cnn", type=Path, help="CNN network JSON (with --dcn)")
    p.add_argument("--dcn", type=Path, help="DCN network JSON (with --cnn)")
    p.add_argument("--channels", type=int)
    p.add_argument("--activation", choices=("relu", "leaky_relu"))
    p.add_argument("--dist", type=_dist_arg, default=DistributionSpec("gaussian", 0.1),
                   metavar="FAMILY[:SCALE]")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--weight-decay", type=float, default=4e-4)
    p.add_argument("--milestones", type=_int_list, default=None)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--checkpoint-every", type=int, default=50)
    p.set_defaults(func=_cmd_train_dcn)

    p = subs.add_parser("metrics", help="pearson and SSIM between two images")
    _common(p)
    p.add_argument("--a", required=True, type=Path)
    p.add_argument("--b", required=True, type=Path)
    p.set_defaults(func=_cmd_metrics)

    p = subs.add_parser("gen-data", help="write deterministic synthetic images")
    _common(p)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--smoothness", type=float, default=1.5)
    p.set_defaults(func=_cmd_gen_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 3
    except RandconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
