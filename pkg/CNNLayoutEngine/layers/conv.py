"""
Forward convolution.

Every algorithm computes the cross-correlation

    out[n][co][y][x] = sum_ci sum_fy sum_fx in[n][ci][y*S + fy][x*S + fx] * filter[co][ci][fy][fx]

over the zero-padded input. `conv_oracle` accumulates in double precision and is the reference for the three fast
paths: the layout-specialized direct kernels, im2col followed by a blocked GEMM, and the frequency-domain product.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft
from numba import njit, prange

from CNNLayoutEngine.layers.gemm import DEFAULT_BLOCK, gemm_blocked
from CNNLayoutEngine.tensor import Layout, LayoutError, ShapeError, Tensor4D

logger = logging.getLogger('CLE.Conv')

IMAGE_BLOCK_MAX = 4
IMAGE_BLOCK_N = 128


class UnsupportedParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ConvParams:
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f'Convolution stride has to be at least 1, got {self.stride}')
        if self.pad < 0:
            raise ValueError(f'Convolution padding cannot be negative, got {self.pad}')


def output_extent(size, f, stride, pad=0):
    extent = (size + 2 * pad - f) // stride + 1
    if size + 2 * pad < f or extent < 1:
        raise ShapeError(f'Window {f} with stride {stride} and pad {pad} does not fit an extent of {size}')
    return extent


def output_dims(in_dims, f, p):
    n, c, h, w = in_dims
    return n, f.c_o, output_extent(h, f.f_h, p.stride, p.pad), output_extent(w, f.f_w, p.stride, p.pad)


def _check_shapes(t, f, p):
    if t.c != f.c_i:
        raise ShapeError(f'Input has {t.c} channels but the filter bank expects {f.c_i}')
    return output_dims(t.dims, f, p)


def image_block(n):
    """Images per local accumulator block of the CHWN kernel: four from N=128 on, fewer for smaller batches."""
    return max(1, min(IMAGE_BLOCK_MAX, n * IMAGE_BLOCK_MAX // IMAGE_BLOCK_N))


def _pad_planes(array, pad, h_axis):
    if pad == 0:
        return array
    widths = [(0, 0)] * array.ndim
    widths[h_axis] = (pad, pad)
    widths[h_axis + 1] = (pad, pad)
    return np.pad(array, widths)


@njit(parallel=True, cache=True)
def _conv_oracle(x, w, stride, ho, wo, out):
    n, c_i = x.shape[0], x.shape[1]
    c_o, f_h, f_w = w.shape[0], w.shape[2], w.shape[3]
    for task in prange(n * c_o):
        i = task // c_o
        co = task % c_o
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for ci in range(c_i):
                    for fy in range(f_h):
                        for fx in range(f_w):
                            acc += x[i, ci, oy * stride + fy, ox * stride + fx] * w[co, ci, fy, fx]
                out[i, co, oy, ox] = acc


@njit(parallel=True, cache=True)
def _conv_direct_chwn(x, w, stride, ho, wo, block, out):
    c_i, n = x.shape[0], x.shape[3]
    c_o, f_h, f_w = w.shape[0], w.shape[2], w.shape[3]
    for task in prange(c_o * ho):
        co = task // ho
        oy = task % ho
        acc = np.empty(block, dtype=np.float32)
        for ox in range(wo):
            for n0 in range(0, n, block):
                nb = min(block, n - n0)
                for b in range(nb):
                    acc[b] = 0.0
                for ci in range(c_i):
                    for fy in range(f_h):
                        iy = oy * stride + fy
                        for fx in range(f_w):
                            ix = ox * stride + fx
                            wv = w[co, ci, fy, fx]
                            for b in range(nb):
                                acc[b] += wv * x[ci, iy, ix, n0 + b]
                for b in range(nb):
                    out[co, oy, ox, n0 + b] = acc[b]


@njit(parallel=True, cache=True)
def _conv_direct_nchw(x, w, stride, ho, wo, out):
    n, c_i = x.shape[0], x.shape[1]
    c_o, f_h, f_w = w.shape[0], w.shape[2], w.shape[3]
    for task in prange(n * c_o):
        i = task // c_o
        co = task % c_o
        for oy in range(ho):
            for ox in range(wo):
                acc = np.float32(0.0)
                for ci in range(c_i):
                    for fy in range(f_h):
                        iy = oy * stride + fy
                        for fx in range(f_w):
                            acc += w[co, ci, fy, fx] * x[i, ci, iy, ox * stride + fx]
                out[i, co, oy, ox] = acc


def conv_oracle(t, f, p=ConvParams()):
    dims = _check_shapes(t, f, p)
    x = _pad_planes(t.logical().astype(np.float64), p.pad, 2)
    out = np.empty(dims, dtype=np.float64)
    _conv_oracle(x, f.array().astype(np.float64), p.stride, dims[2], dims[3], out)
    return Tensor4D._wrap(dims, Layout.NCHW, out.astype(np.float32).reshape(-1))


def conv_direct(t, f, p=ConvParams()):
    dims = _check_shapes(t, f, p)
    n, c_o, ho, wo = dims
    if t.layout == Layout.CHWN:
        x = _pad_planes(t.physical(), p.pad, 1)
        out = np.empty((c_o, ho, wo, n), dtype=np.float32)
        _conv_direct_chwn(x, f.array(), p.stride, ho, wo, image_block(n), out)
    elif t.layout == Layout.NCHW:
        x = _pad_planes(t.physical(), p.pad, 2)
        out = np.empty(dims, dtype=np.float32)
        _conv_direct_nchw(x, f.array(), p.stride, ho, wo, out)
    else:
        raise LayoutError(f'No direct convolution kernel for {t.layout.name}')
    return Tensor4D._wrap(dims, t.layout, out.reshape(-1))


def im2col(t, f_h, f_w, p=ConvParams()):
    """
    Unroll the receptive fields of an NCHW tensor into a (C*f_h*f_w) x (N*H_out*W_out) matrix.

    Column j = (n*H_out + y)*W_out + x holds the window of output position (n, y, x); rows run over (c, fy, fx).
    """
    if t.layout != Layout.NCHW:
        raise LayoutError(f'im2col expects an NCHW tensor, got {t.layout.name}')
    n, c, h, w = t.dims
    ho = output_extent(h, f_h, p.stride, p.pad)
    wo = output_extent(w, f_w, p.stride, p.pad)
    img = _pad_planes(t.physical(), p.pad, 2)

    col = np.empty((c, f_h, f_w, n, ho, wo), dtype=np.float32)
    for fy in range(f_h):
        y_max = fy + p.stride * ho
        for fx in range(f_w):
            x_max = fx + p.stride * wo
            col[:, fy, fx] = img[:, :, fy:y_max:p.stride, fx:x_max:p.stride].transpose(1, 0, 2, 3)
    return col.reshape(c * f_h * f_w, n * ho * wo)


def conv_gemm(t, f, p=ConvParams(), block=DEFAULT_BLOCK):
    dims = _check_shapes(t, f, p)
    if t.layout != Layout.NCHW:
        raise LayoutError(f'GEMM convolution expects an NCHW tensor, got {t.layout.name}')
    n, c_o, ho, wo = dims
    col = im2col(t, f.f_h, f.f_w, p)
    product = gemm_blocked(f.data.reshape(c_o, -1), col, block)
    out = np.ascontiguousarray(product.reshape(c_o, n, ho, wo).transpose(1, 0, 2, 3))
    return Tensor4D._wrap(dims, Layout.NCHW, out.reshape(-1))


def _next_pow2(size):
    return 1 << (int(size) - 1).bit_length()


def conv_fft(t, f, p=ConvParams()):
    dims = _check_shapes(t, f, p)
    if t.layout != Layout.NCHW:
        raise LayoutError(f'FFT convolution expects an NCHW tensor, got {t.layout.name}')
    if p.stride != 1:
        raise UnsupportedParameterError(f'stride unsupported: the frequency-domain path needs stride 1, '
                                        f'got {p.stride}')
    n, c_o, ho, wo = dims
    x = _pad_planes(t.physical().astype(np.float64), p.pad, 2)
    shape = (_next_pow2(x.shape[2] + f.f_h - 1), _next_pow2(x.shape[3] + f.f_w - 1))

    # flipping turns the frequency-domain convolution into the cross-correlation
    kernel = f.array()[:, :, ::-1, ::-1].astype(np.float64)
    x_hat = scipy.fft.rfft2(x, s=shape)
    k_hat = scipy.fft.rfft2(kernel, s=shape)
    y = scipy.fft.irfft2(np.einsum('nihw,oihw->nohw', x_hat, k_hat), s=shape)

    out = y[:, :, f.f_h - 1:f.f_h - 1 + ho, f.f_w - 1:f.f_w - 1 + wo].astype(np.float32)
    return Tensor4D._wrap(dims, Layout.NCHW, np.ascontiguousarray(out).reshape(-1))


CONV_ALGORITHMS = {
    'direct': conv_direct,
    'gemm': conv_gemm,
    'fft': conv_fft,
}
