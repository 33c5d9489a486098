"""
Classifier tail: softmax and the fully-connected layer.

`softmax_reference` runs the five steps as separate passes over full N x C intermediates. `softmax_fused` makes one
pass per image: the row is loaded once into a local buffer, reduced for its maximum, exponentiated, reduced for its
sum and normalized on the way out. Rows that do not fit the local buffer are streamed in two phases.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from CNNLayoutEngine.layers.gemm import DEFAULT_BLOCK, gemm_blocked
from CNNLayoutEngine.tensor import Layout, LayoutError, ShapeError

logger = logging.getLogger('CLE.Softmax')

REDUCTION_BLOCK = 256
LOCAL_BUFFER = 16384


class DomainError(ValueError):
    pass


@dataclass
class SoftmaxScratch:
    maxv: np.ndarray  # (N,)
    midv1: np.ndarray  # (N, C) shifted inputs
    midv2: np.ndarray  # (N, C) exponentials
    sumv: np.ndarray  # (N,)


@dataclass(frozen=True)
class PassReport:
    materializations: int  # intermediate arrays written to memory
    sweeps: int  # full N x C matrix reads plus writes

    def element_traffic(self, n, c):
        return self.sweeps * n * c


def _check_input(x):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f'Softmax expects an N x C matrix, got {x.ndim} dimensions')
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f'Softmax needs at least one image and one category, got {x.shape}')
    if not np.all(np.isfinite(x)):
        raise DomainError('Softmax input contains non-finite values')
    return x


def softmax_reference(x, return_report=False):
    x = _check_input(x).astype(np.float64)
    scratch = SoftmaxScratch(maxv=None, midv1=None, midv2=None, sumv=None)
    # 1: per-image maximum (1 read sweep)
    scratch.maxv = x.max(axis=1)
    # 2: shift (read + write)
    scratch.midv1 = x - scratch.maxv[:, None]
    # 3: exponentiate (read + write)
    scratch.midv2 = np.exp(scratch.midv1)
    # 4: per-image sum (read)
    scratch.sumv = scratch.midv2.sum(axis=1)
    # 5: normalize (read + write)
    out = (scratch.midv2 / scratch.sumv[:, None]).astype(np.float32)
    if return_report:
        return out, PassReport(materializations=3, sweeps=8)
    return out


@njit(cache=True)
def _pairwise_combine(partials, count, use_max):
    # deterministic tree over the block partials
    while count > 1:
        half = count // 2
        for i in range(half):
            if use_max:
                partials[i] = max(partials[2 * i], partials[2 * i + 1])
            else:
                partials[i] = partials[2 * i] + partials[2 * i + 1]
        if count % 2 == 1:
            partials[half] = partials[count - 1]
            count = half + 1
        else:
            count = half
    return partials[0]


@njit(parallel=True, cache=True)
def _softmax_local(x, block, out):
    n, c = x.shape
    n_blocks = (c + block - 1) // block
    for i in prange(n):
        buf = np.empty(c, dtype=np.float64)
        partials = np.empty(n_blocks, dtype=np.float64)
        for j in range(c):
            buf[j] = x[i, j]
        for k in range(n_blocks):
            m = -np.inf
            for j in range(k * block, min((k + 1) * block, c)):
                if buf[j] > m:
                    m = buf[j]
            partials[k] = m
        row_max = _pairwise_combine(partials, n_blocks, True)
        for k in range(n_blocks):
            s = 0.0
            for j in range(k * block, min((k + 1) * block, c)):
                buf[j] = np.exp(buf[j] - row_max)
                s += buf[j]
            partials[k] = s
        row_sum = _pairwise_combine(partials, n_blocks, False)
        for j in range(c):
            out[i, j] = buf[j] / row_sum


@njit(parallel=True, cache=True)
def _softmax_streaming(x, block, out):
    n, c = x.shape
    for i in prange(n):
        # phase one: running (max, sum) merged block by block
        run_max = -np.inf
        run_sum = 0.0
        for j0 in range(0, c, block):
            j1 = min(j0 + block, c)
            m = -np.inf
            for j in range(j0, j1):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(j0, j1):
                s += np.exp(x[i, j] - m)
            if m > run_max:
                run_sum = run_sum * np.exp(run_max - m) + s
                run_max = m
            else:
                run_sum += s * np.exp(m - run_max)
        # phase two: normalize
        for j in range(c):
            out[i, j] = np.exp(x[i, j] - run_max) / run_sum


def softmax_fused(x, block=REDUCTION_BLOCK, local_buffer=LOCAL_BUFFER):
    x = _check_input(x)
    n, c = x.shape
    out = np.empty((n, c), dtype=np.float32)
    if c <= local_buffer:
        _softmax_local(x, block, out)
        return out, PassReport(materializations=0, sweeps=2)
    logger.debug(f'Rows of {c} categories exceed the local buffer of {local_buffer}, streaming')
    _softmax_streaming(x, block, out)
    return out, PassReport(materializations=0, sweeps=3)


def as_matrix(t):
    """N x (C*H*W) classifier input of a feature map. CHWN gives a transposed view, nothing is moved."""
    if t.layout == Layout.NCHW:
        return t.data.reshape(t.n, -1)
    if t.layout == Layout.CHWN:
        return t.data.reshape(-1, t.n).T
    raise LayoutError(f'Cannot flatten a {t.layout.name} feature map for the classifier')


def fc_forward(x, weights, block=DEFAULT_BLOCK):
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f'Fully-connected layer cannot multiply {x.shape} by {weights.shape}')
    return gemm_blocked(x, weights, block)
