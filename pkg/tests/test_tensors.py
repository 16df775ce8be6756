"""Tensor primitives against naive nested-loop oracles."""
import numpy as np
import pytest

from randconv.errors import ParameterError, ShapeError
from randconv.tensors import (
    FeatureMaps,
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

from conftest import naive_conv, naive_out_extent, naive_pool


def _maps(rng, c, h, w):
    return FeatureMaps(rng.normal(size=(c, h * w)), h, w)


@pytest.mark.parametrize("c,h,w,n,k,stride,padding", [
    (1, 5, 5, 3, 3, 1, 0),
    (2, 6, 4, 4, 3, 1, 1),
    (3, 8, 8, 2, 2, 2, 0),
    (2, 7, 9, 5, 5, 2, 2),
    (1, 11, 3, 1, 3, 3, 1),
])
def test_conv_matches_naive(rng, c, h, w, n, k, stride, padding):
    x = _maps(rng, c, h, w)
    filters = rng.normal(size=(n, c * k * k))
    p = patch_index(h, w, k, stride, padding)
    got = conv_forward(extract_patches(x, p), filters)
    want = naive_conv(x.grid(), filters.reshape(n, c, k, k), stride, padding)
    assert got.grid().shape == want.shape
    np.testing.assert_allclose(got.grid(), want, atol=1e-12)


def test_patch_index_hand_case():
    # 3x3 image, 2x2 window, stride 1: four patches reading row-major
    p = patch_index(3, 3, 2, 1)
    assert (p.out_height, p.out_width) == (2, 2)
    want = [[0, 1, 3, 4], [1, 2, 4, 5], [3, 4, 6, 7], [4, 5, 7, 8]]
    assert p.slots.tolist() == want


def test_patch_index_padding_sentinels():
    p = patch_index(2, 2, 3, 1, padding=1)
    # top-left patch covers one padding row and column
    assert p.slots[0].tolist() == [-1, -1, -1, -1, 0, 1, -1, 2, 3]


def test_ceil_mode_extent_chain():
    # 2x2 window, stride 2, ceil mode: the dims halve the way the vgg
    # pooling chain does
    sizes = [227]
    for _ in range(4):
        sizes.append(naive_out_extent(sizes[-1], 2, 2, 0, ceil_mode=True))
    assert sizes == [227, 114, 57, 29, 15]
    for size, want in zip(sizes, sizes[1:]):
        assert patch_index(size, size, 2, 2, ceil_mode=True).out_height == want


def test_ceil_mode_clips_windows_born_in_padding():
    # without the clip a 2x2/stride-2 ceil pool of a 4-pixel row with
    # padding 1 would claim a window starting beyond the data
    p = patch_index(4, 4, 2, 2, padding=1, ceil_mode=True)
    assert p.out_height == naive_out_extent(4, 2, 2, 1, ceil_mode=True) == 3


@pytest.mark.parametrize("kind,fn", [("max", max_pool), ("l2", l2_pool), ("avg", avg_pool)])
@pytest.mark.parametrize("h,w,k,stride,padding,ceil", [
    (6, 6, 2, 2, 0, False),
    (5, 7, 3, 2, 1, False),
    (5, 5, 3, 2, 0, True),
    (7, 4, 2, 2, 1, True),
])
def test_pools_match_naive(rng, kind, fn, h, w, k, stride, padding, ceil):
    x = _maps(rng, 3, h, w)
    p = patch_index(h, w, k, stride, padding, ceil_mode=ceil)
    got = fn(x, p)
    want = naive_pool(x.grid(), kind, k, stride, padding, ceil)
    np.testing.assert_allclose(got.grid(), want, atol=1e-12)


def test_max_pool_rejects_all_padding_window():
    p = patch_index(1, 1, 3, 3, padding=2)  # some windows see no data... build one
    # out extent: (1+4-3)//3+1 = 1, window covers rows -2..0 - has data; craft harder:
    p = patch_index(2, 2, 2, 2, padding=2, ceil_mode=True)
    x = FeatureMaps(np.ones((1, 4)), 2, 2)
    if (p.slots == -1).all(axis=1).any():
        with pytest.raises(ShapeError):
            max_pool(x, p)
    else:
        pytest.skip("geometry produced no empty window")


def test_upsample_scatters_to_block_corners(rng):
    x = _maps(rng, 2, 2, 3)
    got = upsample(x, 2).grid()
    assert got.shape == (2, 4, 6)
    np.testing.assert_array_equal(got[:, ::2, ::2], x.grid())
    mask = np.ones((4, 6), dtype=bool)
    mask[::2, ::2] = False
    assert (got[:, mask] == 0).all()


def test_crop_takes_top_left(rng):
    x = _maps(rng, 2, 5, 5)
    got = crop(x, 3, 4)
    np.testing.assert_array_equal(got.grid(), x.grid()[:, :3, :4])
    with pytest.raises(ShapeError):
        crop(x, 6, 2)


def test_channel_mean_and_scale(rng):
    x = _maps(rng, 4, 3, 3)
    m = channel_mean(x)
    assert m.channels == 1
    np.testing.assert_allclose(m.data[0], x.data.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(scale(x, 0.25).data, x.data * 0.25, atol=1e-15)


def test_relu_and_leaky():
    x = FeatureMaps([[-1.0, 0.0, 2.0, -0.5]], 2, 2)
    np.testing.assert_array_equal(relu(x).data, [[0.0, 0.0, 2.0, 0.0]])
    np.testing.assert_allclose(leaky_relu(x, 0.2).data, [[-0.2, 0.0, 2.0, -0.1]])
    np.testing.assert_array_equal(leaky_relu(x, 0.0).data, relu(x).data)
    with pytest.raises(ParameterError):
        leaky_relu(x, 1.0)
    with pytest.raises(ParameterError):
        leaky_relu(x, -0.1)


def test_feature_maps_frozen(rng):
    x = _maps(rng, 1, 2, 2)
    with pytest.raises(ValueError):
        x.data[0, 0] = 5.0


def test_shape_validation():
    with pytest.raises(ShapeError):
        FeatureMaps(np.zeros((2, 5)), 2, 3)  # 5 != 2*3
    with pytest.raises(ParameterError):
        patch_index(4, 4, 0, 1)
    with pytest.raises(ParameterError):
        patch_index(4, 4, 2, 0)
    with pytest.raises(ShapeError):
        patch_index(2, 2, 5, 1)  # kernel larger than padded input


def test_conv_filter_shape_mismatch(rng):
    x = _maps(rng, 2, 4, 4)
    p = patch_index(4, 4, 2, 1)
    with pytest.raises(ShapeError):
        conv_forward(extract_patches(x, p), rng.normal(size=(3, 9)))
