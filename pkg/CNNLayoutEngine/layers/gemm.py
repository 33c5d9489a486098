import numpy as np
from numba import njit, prange

from CNNLayoutEngine.tensor import ShapeError

DEFAULT_BLOCK = 64


@njit(parallel=True, cache=True)
def _gemm_blocked(a, b, block, out):
    # out must be pre-zeroed
    m, k = a.shape
    n = b.shape[1]
    n_i_blocks = (m + block - 1) // block
    for ib in prange(n_i_blocks):
        i0 = ib * block
        i1 = min(i0 + block, m)
        for k0 in range(0, k, block):
            k1 = min(k0 + block, k)
            for j0 in range(0, n, block):
                j1 = min(j0 + block, n)
                for i in range(i0, i1):
                    for kk in range(k0, k1):
                        aik = a[i, kk]
                        for j in range(j0, j1):
                            out[i, j] += aik * b[kk, j]


def gemm_blocked(a, b, block=DEFAULT_BLOCK):
    """
    Single-precision matrix product `a @ b` through cache blocks of `block`^3 elements.

    Operands may be strided views (e.g. a transposed feature map); they are not copied.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f'GEMM expects two matrices but got {a.ndim}D and {b.ndim}D operands')
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f'Inner dimensions do not agree: {a.shape} x {b.shape}')
    if block < 1:
        raise ValueError('GEMM block has to be at least 1')
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    _gemm_blocked(a, b, block, out)
    return out
