import numpy as np
import pytest

from CNNLayoutEngine.bench.fixtures import fixtures_of_kind
from CNNLayoutEngine.layers.conv import (ConvParams, UnsupportedParameterError, conv_direct, conv_fft, conv_gemm,
                                         conv_oracle, im2col, image_block, output_extent)
from CNNLayoutEngine.layers.gemm import gemm_blocked
from CNNLayoutEngine.layers.layer_factory import ConvAlgFactory
from CNNLayoutEngine.layout import transform
from CNNLayoutEngine.tensor import FilterBank, Layout, LayoutError, ShapeError, Tensor4D, approx_equal


def get_small_config(rng, strides=(1, 2)):
    n = int(rng.choice([1, 4, 32]))
    c_i = int(rng.choice([1, 3, 16, 64]))
    f = int(rng.choice([1, 3, 5]))
    stride = int(rng.choice(strides))
    pad = int(rng.choice([0, 1, 2]))
    hw = int(rng.integers(f, 12))
    c_o = int(rng.integers(1, 9))
    return (n, c_i, hw, hw), (c_o, c_i, f, f), ConvParams(stride=stride, pad=pad)


def test_oracle_hand_example():
    t = Tensor4D.from_logical(np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3))
    f = FilterBank((1, 1, 2, 2), [1, 0, 0, 1])
    out = conv_oracle(t, f)

    assert out.dims == (1, 1, 2, 2)
    assert out.logical()[0, 0].tolist() == [[6, 8], [12, 14]]


def test_oracle_identity_kernel():
    t = Tensor4D.random((2, 1, 5, 4), seed=1)
    out = conv_oracle(t, FilterBank((1, 1, 1, 1), [1.0]))

    assert np.array_equal(out.logical(), t.logical())


def test_output_extent():
    assert output_extent(24, 5, 1) == 20
    assert output_extent(224, 3, 2) == 111
    assert output_extent(13, 3, 1, 1) == 13
    assert output_extent(7, 3, 2) == 3
    with pytest.raises(ShapeError):
        output_extent(2, 5, 1)


def test_conv3_output_shape():
    t = Tensor4D.random((128, 3, 24, 24), seed=2)
    f = FilterBank.random((64, 3, 5, 5), seed=3)

    assert conv_oracle(t, f).dims == (128, 64, 20, 20)


def test_channel_mismatch():
    t = Tensor4D.random((1, 3, 5, 5), seed=4)
    f = FilterBank.random((2, 4, 3, 3), seed=5)

    with pytest.raises(ShapeError):
        conv_oracle(t, f)
    with pytest.raises(ShapeError):
        conv_direct(t, f)


def test_direct_rejects_other_layouts():
    t = Tensor4D.random((1, 2, 5, 5), Layout.NHWC, seed=6)

    with pytest.raises(LayoutError):
        conv_direct(t, FilterBank.random((1, 2, 3, 3)))


def test_image_block():
    assert image_block(256) == 4
    assert image_block(128) == 4
    assert image_block(64) == 2
    assert image_block(32) == 1
    assert image_block(1) == 1


def test_direct_chwn_batch_independence():
    t = Tensor4D.random((128, 3, 8, 8), Layout.CHWN, seed=7)
    f = FilterBank.random((4, 3, 3, 3), seed=8)
    full = conv_direct(t, f).logical()

    halves = [conv_direct(Tensor4D.from_logical(t.logical()[s], Layout.CHWN), f).logical()
              for s in (slice(0, 64), slice(64, 128))]
    assert np.allclose(full, np.concatenate(halves), rtol=1e-6, atol=1e-6)


def test_direct_chwn_partial_image_block():
    # 130 images: 32 full blocks of four and a remainder of two
    t = Tensor4D.random((130, 3, 9, 9), Layout.CHWN, seed=14)
    f = FilterBank.random((5, 3, 3, 3), seed=15)
    p = ConvParams(stride=2, pad=1)

    assert image_block(130) == 4
    assert approx_equal(conv_direct(t, f, p), conv_oracle(t, f, p), 1e-5)


def test_zero_filter():
    t = Tensor4D.random((4, 3, 6, 6), Layout.CHWN, seed=9)
    f = FilterBank((2, 3, 3, 3), np.zeros(54))

    assert not np.any(conv_direct(t, f).data)
    assert not np.any(conv_direct(transform(t, Layout.NCHW), f).data)


def test_im2col_patches():
    t = Tensor4D.from_logical(np.arange(1, 10, dtype=np.float32).reshape(1, 1, 3, 3))
    col = im2col(t, 2, 2)

    assert col.shape == (4, 4)
    assert col[:, 0].tolist() == [1, 2, 4, 5]
    assert col[:, 1].tolist() == [2, 3, 5, 6]
    assert col[:, 2].tolist() == [4, 5, 7, 8]
    assert col[:, 3].tolist() == [5, 6, 8, 9]


def test_im2col_unit_window():
    t = Tensor4D.random((2, 3, 4, 4), seed=10)
    col = im2col(t, 1, 1)

    assert np.array_equal(col, t.logical().transpose(1, 0, 2, 3).reshape(3, -1))


def test_im2col_padding():
    t = Tensor4D((1, 1, 1, 1), Layout.NCHW, [7.0])
    col = im2col(t, 3, 3, ConvParams(stride=1, pad=1))

    assert col.shape == (9, 1)
    assert col[:, 0].tolist() == [0, 0, 0, 0, 7, 0, 0, 0, 0]


def test_gemm_channel_sums():
    t = Tensor4D.random((2, 5, 3, 3), seed=11)
    out = conv_gemm(t, FilterBank((1, 5, 1, 1), np.ones(5)))

    assert np.allclose(out.logical()[:, 0], t.logical().sum(axis=1), rtol=1e-5, atol=1e-6)


def test_oracle_sweep_all_algorithms():
    rng = np.random.default_rng(12)
    for i in range(100):
        in_dims, f_dims, p = get_small_config(rng)
        if in_dims[2] + 2 * p.pad < f_dims[2]:
            continue
        t = Tensor4D.random(in_dims, Layout.NCHW, seed=i)
        f = FilterBank.random(f_dims, seed=i + 1000)
        oracle = conv_oracle(t, f, p)

        assert approx_equal(conv_direct(transform(t, Layout.CHWN), f, p), oracle, 1e-5)
        assert approx_equal(conv_direct(t, f, p), oracle, 1e-5)
        assert approx_equal(conv_gemm(t, f, p), oracle, 1e-5)
        if p.stride == 1:
            assert approx_equal(conv_fft(t, f, p), oracle, 1e-3)


def test_fft_larger_inputs():
    rng = np.random.default_rng(13)
    for i in range(10):
        hw = int(rng.integers(8, 33))
        c_i = int(rng.choice([1, 3, 16, 64]))
        t = Tensor4D.random((2, c_i, hw, hw), seed=i)
        f = FilterBank.random((3, c_i, 5, 5), seed=i + 1)
        p = ConvParams(stride=1, pad=int(rng.integers(0, 3)))

        assert approx_equal(conv_fft(t, f, p), conv_oracle(t, f, p), 1e-3)


def test_fft_delta_filter():
    t = Tensor4D.random((2, 1, 6, 6), seed=14)
    f = FilterBank((1, 1, 3, 3), [1, 0, 0, 0, 0, 0, 0, 0, 0])
    out = conv_fft(t, f)

    assert np.allclose(out.logical(), t.logical()[:, :, :4, :4], atol=1e-6)


def test_fft_rejects_stride():
    t = Tensor4D.random((2, 3, 31, 31), seed=15)
    f = FilterBank.random((4, 3, 3, 3), seed=16)

    with pytest.raises(UnsupportedParameterError):
        conv_fft(t, f, ConvParams(stride=2))


def test_linearity():
    t = Tensor4D.random((4, 3, 7, 7), Layout.CHWN, seed=17)
    f = FilterBank.random((2, 3, 3, 3), seed=18)
    base = conv_direct(t, f).logical()
    for a in (-1.0, 0.5, 2.0):
        scaled = Tensor4D.from_logical(a * t.logical(), Layout.CHWN)
        assert np.allclose(conv_direct(scaled, f).logical(), a * base, rtol=1e-5, atol=1e-6)


def test_batch_permutation():
    t = Tensor4D.random((6, 2, 5, 5), seed=19)
    f = FilterBank.random((3, 2, 3, 3), seed=20)
    perm = np.array([3, 0, 5, 1, 4, 2])
    permuted = Tensor4D.from_logical(t.logical()[perm])

    assert np.array_equal(conv_gemm(permuted, f).logical(), conv_gemm(t, f).logical()[perm])


def test_gemm_blocked_against_float64():
    rng = np.random.default_rng(21)
    a = rng.uniform(-1, 1, size=(32, 64)).astype(np.float32)
    b = rng.uniform(-1, 1, size=(64, 100)).astype(np.float32)
    expected = a.astype(np.float64) @ b.astype(np.float64)

    assert np.allclose(gemm_blocked(a, b, block=16), expected, rtol=1e-5, atol=1e-5)
    assert np.allclose(gemm_blocked(b.T, a.T), expected.T, rtol=1e-5, atol=1e-5)
    with pytest.raises(ShapeError):
        gemm_blocked(a, a)


def test_conv_alg_factory():
    assert ConvAlgFactory.get_conv_alg(Layout.CHWN)[0] == 'direct'
    assert ConvAlgFactory.get_conv_alg(Layout.NCHW)[0] == 'gemm'
    assert ConvAlgFactory.get_conv_alg(Layout.NCHW, use_fft=True)[0] == 'fft'
    assert ConvAlgFactory.get_conv_alg(Layout.NCHW, use_fft=True, stride=2)[0] == 'gemm'
    with pytest.raises(LayoutError):
        ConvAlgFactory.get_conv_alg(Layout.HWCN)


def test_conv_fixtures_agree_with_oracle():
    for fixture in fixtures_of_kind('conv', scale=8, hw_cap=16):
        t = Tensor4D.random(fixture.input_dims, Layout.NCHW, seed=22)
        f = FilterBank.random(fixture.filter_dims, seed=23)
        p = fixture.conv_params
        oracle = conv_oracle(t, f, p)

        assert approx_equal(conv_direct(transform(t, Layout.CHWN), f, p), oracle, 1e-5), fixture.id
        assert approx_equal(conv_gemm(t, f, p), oracle, 1e-5), fixture.id
        if p.stride == 1:
            assert approx_equal(conv_fft(t, f, p), oracle, 1e-3), fixture.id
        else:
            with pytest.raises(UnsupportedParameterError):
                conv_fft(t, f, p)
