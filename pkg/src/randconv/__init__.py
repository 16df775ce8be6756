"""Random-weight CNN-DCN networks, their deterministic limits, and the
deviation bounds that say how fast finite widths get there.

The library builds convolution/pooling/upsampling stacks with freshly
sampled filters, computes the closed-form image such a stack converges to
as channel counts grow, bounds the angle a finite network makes with that
limit, and checks everything by Monte Carlo. A small trainer fits
deconvolutional inversion heads, and sweep drivers reproduce the
reconstruction-quality trends against channel count and kernel size.
"""
from .distributions import (
    DistributionSpec,
    FAMILIES,
    FilterBank,
    LayerFilters,
    Moments,
    angular_kernel,
    derive_seed,
    load_filterbank,
    moments,
    sample_filterbank,
    save_filterbank,
    substream,
)
from .errors import (
    AssumptionError,
    DataError,
    DegenerateInputError,
    IsotropyError,
    ParameterError,
    RandconvError,
    ShapeError,
    VerificationError,
    WrongVariantError,
)
from .images import (
    generate_synthetic,
    load_image,
    load_image_dir,
    save_image,
    write_synthetic,
)
from .metrics import GrayImage, pearson, ssim_reported, to_gray
from .network import (
    LayerSpec,
    MODES,
    NetworkSpec,
    PRESET_NAMES,
    build_preset,
    build_preset_parts,
    dim_trace,
    filter_shapes,
    forward,
    load_network,
    network_from_dict,
    network_to_dict,
    network_to_json,
    with_uniform_channels,
    zero_input,
)
from .sweeps import (
    SweepAggregate,
    SweepResult,
    SweepRow,
    normalize_for_display,
    score_reconstruction,
    sweep_channels,
    sweep_kernel,
    write_sweep_csv,
)
from .tensors import (
    FeatureMaps,
    PatchIndex,
    PatchedMaps,
    avg_pool,
    channel_mean,
    conv_forward,
    crop,
    extract_patches,
    l2_pool,
    leaky_relu,
    max_pool,
    patch_index,
    relu,
    scale,
    upsample,
)
from .theory import (
    BoundReport,
    ConvergenceField,
    GramField,
    RouteCountMap,
    compute_route_counts,
    convergence_field_avg,
    convergence_field_l2,
    cos_angle,
    cosine_bound,
    epsilon_operator,
    gram_conv_step,
    mc_verify,
    route_form_z_star,
    sin_angle,
    variance_bound_multilayer,
    variance_bound_two_layer,
)
from .training import (
    DcnParams,
    TrainConfig,
    adam_step,
    backward,
    forward_dcn,
    load_checkpoint,
    loss_l2,
    msra_init,
    save_checkpoint,
    train_dcn,
    write_history_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
