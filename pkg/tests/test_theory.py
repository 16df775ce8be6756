"""Convergence fields, route counts, Gram recurrence, and deviation bounds."""
import math

import numpy as np
import pytest

from randconv.distributions import DistributionSpec, moments
from randconv.errors import (
    AssumptionError,
    DegenerateInputError,
    IsotropyError,
    ParameterError,
    WrongVariantError,
)
from randconv.network import LayerSpec, NetworkSpec
from randconv.tensors import FeatureMaps, patch_index
from randconv.theory import (
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

GAUSS = DistributionSpec("gaussian", 1.0)
MOM = moments(GAUSS)


def _analytic(layers, c, h, w):
    return NetworkSpec(tuple(layers), c, h, w, mode="analytic")


def _conv(k, stride, out, padding=0):
    return LayerSpec("conv", kernel=k, stride=stride, padding=padding, out_channels=out)


def test_single_conv_hand_case():
    # 2x2 input [[1,2],[3,4]], 3x3 window with padding 1: every window sees
    # all four pixels, so z* is sqrt(1+4+9+16) everywhere
    spec = _analytic([_conv(3, 1, 8, padding=1)], 1, 2, 2)
    x = FeatureMaps([[1.0, 2.0, 3.0, 4.0]], 2, 2)
    field = convergence_field_l2(spec, MOM, x)
    np.testing.assert_allclose(field.z_star, np.full(4, math.sqrt(30.0)), atol=1e-12)
    np.testing.assert_allclose(field.f_star, MOM.k1 * field.z_star, atol=1e-12)
    rc = compute_route_counts(spec)
    assert rc.counts.dtype == np.int64
    np.testing.assert_array_equal(rc.counts, np.ones((4, 4), dtype=np.int64))
    np.testing.assert_allclose(route_form_z_star(rc, x), field.z_star, atol=1e-12)


def test_route_counts_equal_window_matrix_product():
    spec = _analytic([_conv(3, 1, 4, padding=1), _conv(3, 1, 4, padding=1)], 1, 4, 4)
    rc = compute_route_counts(spec)

    def window_matrix(h, w, k, s, pad):
        p = patch_index(h, w, k, s, pad)
        m = np.zeros((p.patch_count, h * w), dtype=np.int64)
        for j in range(p.patch_count):
            for slot in p.slots[j]:
                if slot >= 0:
                    m[j, slot] += 1
        return m

    w1 = window_matrix(4, 4, 3, 1, 1)
    w2 = window_matrix(4, 4, 3, 1, 1)
    np.testing.assert_array_equal(rc.counts, (w2 @ w1).T)
    # centre-to-centre routes through two 3x3 stages: one per intermediate
    # pixel of the receptive overlap, 9 in total
    centre = 1 * 4 + 1
    assert rc.counts[centre, centre] == 9


def test_recurrence_matches_route_form(rng):
    spec = _analytic(
        [_conv(2, 2, 16), LayerSpec("l2_pool", kernel=2, stride=2), _conv(2, 2, 16)],
        1, 16, 16,
    )
    x = FeatureMaps(rng.random((1, 256)) + 0.1, 16, 16)
    field = convergence_field_l2(spec, MOM, x)
    routes = route_form_z_star(compute_route_counts(spec), x)
    np.testing.assert_allclose(field.z_star, routes, rtol=1e-12)
    np.testing.assert_allclose(field.f_star, field.k * field.z_star, rtol=1e-12)


def test_recurrence_handles_upsample(rng):
    spec = _analytic(
        [_conv(2, 2, 8), LayerSpec("upsample", factor=2), _conv(3, 1, 8, padding=1)],
        2, 8, 8,
    )
    x = FeatureMaps(rng.random((2, 64)), 8, 8)
    field = convergence_field_l2(spec, MOM, x)
    routes = route_form_z_star(compute_route_counts(spec), x)
    np.testing.assert_allclose(field.z_star, routes, rtol=1e-12)
    assert field.out_height == field.out_width == 8


def test_avg_and_l2_fields_agree_without_pooling(rng):
    # no pooling layers: both recurrences describe the same network
    spec = _analytic([_conv(2, 2, 8), _conv(3, 1, 8, padding=1)], 1, 8, 8)
    x = FeatureMaps(rng.random((1, 64)), 8, 8)
    l2_field = convergence_field_l2(spec, MOM, x)
    _, avg_field = convergence_field_avg(spec, MOM, x)
    np.testing.assert_allclose(avg_field.f_star, l2_field.f_star, rtol=1e-10)


def test_gram_step_constant_input_closed_form():
    # constant image, full interior windows: cos = 1 between all patches,
    # so the next Gram is k2 * z z^T with z^2 = kernel^2 * c^2
    c = 0.7
    p = patch_index(3, 3, 2, 1)
    gram = np.full((9, 9), c * c)
    out = gram_conv_step(gram, p, MOM.k2)
    want = MOM.k2 * 4 * c * c
    np.testing.assert_allclose(out, np.full((4, 4), want), rtol=1e-12)


def test_gram_step_preserves_psd(rng):
    data = rng.normal(size=(3, 16))
    gram = data.T @ data
    p = patch_index(4, 4, 3, 1, 1)
    out = gram_conv_step(gram, p, MOM.k2)
    assert np.allclose(out, out.T, atol=1e-12)
    eig = np.linalg.eigvalsh(out)
    assert eig.min() > -1e-9 * max(eig.max(), 1.0)


def test_avg_pool_gram_is_projection(rng):
    spec = _analytic(
        [_conv(2, 1, 4), LayerSpec("avg_pool", kernel=2, stride=2), _conv(2, 1, 4)],
        1, 5, 5,
    )
    x = FeatureMaps(rng.random((1, 25)), 5, 5)
    gram_field, _ = convergence_field_avg(spec, MOM, x)
    # stage 1 is the pool: its input Gram is grams[1] on a 4x4 grid and its
    # output Gram is grams[2]; the pool acts as M C M^T with M averaging
    before, after = gram_field.grams[1], gram_field.grams[2]
    p = patch_index(4, 4, 2, 2)
    m = np.zeros((p.patch_count, 16))
    for j in range(p.patch_count):
        m[j, p.slots[j]] = 1.0 / p.slot_count
    np.testing.assert_allclose(after, m @ before @ m.T, atol=1e-12)


def test_epsilon_operator_partition_identity(rng):
    v = rng.normal(size=36)
    p = patch_index(6, 6, 2, 2)
    eps = epsilon_operator(v, p)
    means_part = v - eps
    assert abs(eps @ means_part) < 1e-10
    means = v[p.slots].mean(axis=1)
    assert v @ v == pytest.approx(4 * float(means @ means) + float(eps @ eps), rel=1e-12)


def test_epsilon_operator_rejects_non_partitions(rng):
    v = rng.normal(size=16)
    with pytest.raises(AssumptionError):
        epsilon_operator(v, patch_index(4, 4, 3, 1))  # overlapping
    with pytest.raises(AssumptionError):
        epsilon_operator(v, patch_index(4, 4, 2, 2, padding=1))  # padded


def test_two_layer_bound_formula():
    rep = variance_bound_two_layer(MOM.K1, 256, 0.1)
    assert rep.bound_value == pytest.approx(math.sqrt((math.pi - 1) / 25.6), rel=1e-12)
    assert not rep.params["vacuous"]
    assert variance_bound_two_layer(MOM.K1, 2, 0.1).params["vacuous"]
    with pytest.raises(ParameterError):
        variance_bound_two_layer(MOM.K1, 256, 0.0)


def test_multilayer_degenerates_to_two_layer(rng):
    spec = _analytic([_conv(2, 2, 64)], 1, 8, 8)
    x = FeatureMaps(rng.random((1, 64)), 8, 8)
    deep = variance_bound_multilayer(spec, MOM, x, delta=0.1)
    flat = variance_bound_two_layer(MOM.K1, 64, 0.1)
    assert abs(deep.bound_value - flat.bound_value) < 1e-12


def test_multilayer_bound_recompute(rng):
    # straight-line recompute of the deep bound on a stride=kernel net
    n = 128
    spec = _analytic([_conv(2, 2, n), _conv(2, 2, n)], 1, 8, 8)
    x = FeatureMaps(rng.random((1, 64)) + 0.2, 8, 8)
    rep = variance_bound_multilayer(spec, MOM, x, delta=0.2)

    L = 3
    inv_nbar = (MOM.K1 / n + MOM.K2 / n) / (L - 1)
    term1 = math.sqrt((L - 1) * inv_nbar / 0.2)

    z0 = np.sqrt([
        sum(x.data[0, s] ** 2 for s in patch_index(8, 8, 2, 2).slots[j])
        for j in range(16)
    ])
    v = z0 ** 2
    p1 = patch_index(4, 4, 2, 2)
    means = v[p1.slots].mean(axis=1)
    spread = v - means.repeat(4)[np.argsort(p1.slots.ravel())]  # undo window order
    lam0 = 1.0 / math.sqrt(1.0 - float(spread @ spread) / float(v @ v))

    z1sq = MOM.k2 * np.array([v[p1.slots[j]].sum() for j in range(4)])
    eps1 = z1sq - z1sq.mean()
    lam1 = 1.0 / math.sqrt(1.0 - float(eps1 @ eps1) / float(z1sq @ z1sq))

    want = term1 + math.sqrt((L - 2) * term1 * lam0 * lam1)
    assert rep.bound_value == pytest.approx(want, rel=1e-10)
    assert rep.params["L"] == 3
    assert len(rep.params["lambdas"]) == 2


def test_multilayer_requires_disjoint_windows(rng):
    spec = _analytic([_conv(3, 1, 8, padding=1), _conv(2, 2, 8)], 1, 8, 8)
    x = FeatureMaps(rng.random((1, 64)), 8, 8)
    with pytest.raises(AssumptionError):
        variance_bound_multilayer(spec, MOM, x)


def test_cosine_bound_all_ones_hand_case():
    x = np.ones((3, 3))
    rep = cosine_bound(x, kernel=3)
    # route-weighted means over 3x3 windows with the 9-route normalizer:
    # eps is 5/9 at corners, 1/3 at edges, 0 at the centre; mass is 9
    want = 1.0 - (4 * (5.0 / 9.0) + 4 * (1.0 / 3.0)) / 9.0
    assert rep.bound_value == pytest.approx(want, rel=1e-12)
    assert rep.holds
    z = np.sqrt(np.array([4, 6, 4, 6, 9, 6, 4, 6, 4], dtype=float))
    assert rep.empirical == pytest.approx(
        float(z.sum()) / (3.0 * float(np.linalg.norm(z))), rel=1e-12)
    assert rep.empirical >= rep.bound_value


def test_cosine_bound_smoother_is_tighter(rng):
    # a flat image still pays the border deficit (missing routes count as
    # zeros), but interior variation only makes the bound worse
    rough = 0.5 + 0.5 * rng.random((12, 12))
    smooth = np.full((12, 12), 0.75)
    assert cosine_bound(smooth, 3).bound_value > cosine_bound(rough, 3).bound_value


def test_cosine_bound_input_policing(rng):
    with pytest.raises(ParameterError):
        cosine_bound(np.zeros((4, 4)), 3)
    with pytest.raises(ParameterError):
        cosine_bound(np.ones((4, 4)) * -1.0, 3)
    spec = _analytic([_conv(2, 2, 4)], 1, 4, 4)  # stride 2: not dim preserving
    with pytest.raises(AssumptionError):
        cosine_bound(np.ones((4, 4)), spec=spec)


def test_cosine_bound_stacked_spec(rng):
    x = 0.2 + rng.random((8, 8))
    spec = _analytic([_conv(3, 1, 4, padding=1), _conv(3, 1, 4, padding=1)], 1, 8, 8)
    rep = cosine_bound(x, spec=spec)
    assert rep.params["n_tot"] == 81
    assert rep.holds


def test_mc_verify_reports(rng):
    spec = _analytic([_conv(3, 1, 4, padding=1)], 1, 8, 8)
    x = FeatureMaps(rng.random((1, 64)) + 0.1, 8, 8)
    reports = mc_verify(spec, DistributionSpec("gaussian", 0.3), x, 128, 10, 0.1, seed=6)
    assert len(reports) == 10
    for t, rep in enumerate(reports):
        assert rep.params["trial"] == t
        assert rep.holds == (rep.empirical <= rep.bound_value)
        assert 0.0 <= rep.empirical <= 1.0
    again = mc_verify(spec, DistributionSpec("gaussian", 0.3), x, 128, 10, 0.1, seed=6)
    assert [r.empirical for r in reports] == [r.empirical for r in again]


def test_mc_verify_rejects_non_gaussian(rng):
    spec = _analytic([_conv(2, 2, 4)], 1, 4, 4)
    x = FeatureMaps(rng.random((1, 16)), 4, 4)
    with pytest.raises(IsotropyError):
        mc_verify(spec, DistributionSpec("uniform", 0.5), x, 8, 2, 0.1, seed=0)
    with pytest.raises(DegenerateInputError):
        mc_verify(spec, GAUSS, FeatureMaps(np.zeros((1, 16)), 4, 4), 8, 2, 0.1, seed=0)


def test_variant_guards(rng):
    x = FeatureMaps(rng.random((1, 64)), 8, 8)
    l2net = _analytic([_conv(2, 2, 4), LayerSpec("l2_pool", kernel=2, stride=2),
                       _conv(2, 1, 4)], 1, 8, 8)
    avgnet = _analytic([_conv(2, 2, 4), LayerSpec("avg_pool", kernel=2, stride=2),
                        _conv(2, 1, 4)], 1, 8, 8)
    with pytest.raises(WrongVariantError):
        convergence_field_l2(avgnet, MOM, x)
    with pytest.raises(WrongVariantError):
        convergence_field_avg(l2net, MOM, x)
    empirical = NetworkSpec((_conv(2, 2, 4),), 1, 8, 8)
    with pytest.raises(ParameterError):
        convergence_field_l2(empirical, MOM, x)


def test_angles():
    assert cos_angle(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(0.0, abs=1e-15)
    assert sin_angle(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(1.0, rel=1e-12)
    a = np.array([1.0, 2.0, -1.0])
    assert cos_angle(a, 3.5 * a) == pytest.approx(1.0, rel=1e-12)
    assert sin_angle(a, 3.5 * a) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(DegenerateInputError):
        cos_angle(a, np.zeros(3))
