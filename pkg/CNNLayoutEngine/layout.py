"""
Data layout transformation.

CHWN and NCHW keep C, H and W in the same relative order, so moving between them is a 2D transpose of an
[N] x [C*H*W] view. That pair goes through a cache-tiled transpose: each tile x tile block is copied through a small
scratch buffer so that both the reads and the writes are unit-stride inside the tile. With wide copy enabled, elements
adjacent along N are moved as one 8-byte unit. Every other layout pair uses the direct 4-nested permutation, which is
also the reference the tiled kernels are checked against.
"""
import logging
import sys
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.tensor import Layout, Tensor4D, layout_strides

logger = logging.getLogger('CLE.Layout')

DEFAULT_TILE = 32
MIN_TILE = 8
MAX_TILE = 128
WIDE_COPY_MIN_N = 64
FLATTENABLE_PAIRS = {(Layout.CHWN, Layout.NCHW), (Layout.NCHW, Layout.CHWN)}

_LOW_MASK = np.uint64(0xFFFFFFFF)
_HALF_SHIFT = np.uint64(32)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class TransformPlan:
    src: Layout
    dst: Layout
    tile: int = DEFAULT_TILE
    wide_copy: bool = False
    naive: bool = False  # marker for pairs that are not a 2D transpose

    def __post_init__(self):
        if self.tile < MIN_TILE or self.tile > MAX_TILE or self.tile & (self.tile - 1):
            raise PlanError(f'Tile edge has to be a power of two in [{MIN_TILE}, {MAX_TILE}], got {self.tile}')
        if self.naive and self.wide_copy:
            raise PlanError('Wide copy is only available for the tiled transformation')
        if not self.naive and (self.src, self.dst) not in FLATTENABLE_PAIRS:
            raise PlanError(f'{self.src.name}->{self.dst.name} is not a flattenable layout pair')

    @property
    def method(self):
        if self.naive:
            return 'naive'
        return 'tiled+wide' if self.wide_copy else 'tiled'


def is_flattenable(src, dst):
    return (Layout(src), Layout(dst)) in FLATTENABLE_PAIRS


def make_plan(src, dst, dims, tile=DEFAULT_TILE):
    src, dst = Layout(src), Layout(dst)
    if not is_flattenable(src, dst):
        return TransformPlan(src, dst, tile=tile, naive=True)
    wide_copy = dims[0] >= WIDE_COPY_MIN_N and sys.byteorder == 'little'
    return TransformPlan(src, dst, tile=tile, wide_copy=wide_copy)


@njit(cache=True)
def _permute_naive(src, src_strides, dst, dst_strides, n, c, h, w):
    for i in range(n):
        for j in range(c):
            for k in range(h):
                for m in range(w):
                    s = i * src_strides[0] + j * src_strides[1] + k * src_strides[2] + m * src_strides[3]
                    d = i * dst_strides[0] + j * dst_strides[1] + k * dst_strides[2] + m * dst_strides[3]
                    dst[d] = src[s]


@njit(parallel=True, cache=True)
def _transpose_tiled(src, rows, cols, tile, dst):
    # src is [rows][cols], dst is [cols][rows]
    n_row_tiles = (rows + tile - 1) // tile
    for rt in prange(n_row_tiles):
        scratch = np.empty((tile, tile), dtype=np.float32)
        r0 = rt * tile
        r1 = min(r0 + tile, rows)
        for c0 in range(0, cols, tile):
            c1 = min(c0 + tile, cols)
            for r in range(r0, r1):
                base = r * cols
                for c in range(c0, c1):
                    scratch[c - c0, r - r0] = src[base + c]
            for c in range(c0, c1):
                base = c * rows
                for r in range(r0, r1):
                    dst[base + r] = scratch[c - c0, r - r0]


@njit(parallel=True, cache=True)
def _transpose_tiled_wide_read(src64, rows, cols, tile, dst):
    # src64 is [rows][cols / 2] pairs of 32-bit words, pairs run along the contiguous cols (N) axis
    half = cols // 2
    half_tile = tile // 2
    n_row_tiles = (rows + tile - 1) // tile
    for rt in prange(n_row_tiles):
        scratch = np.empty((tile, tile), dtype=np.uint32)
        r0 = rt * tile
        r1 = min(r0 + tile, rows)
        for p0 in range(0, half, half_tile):
            p1 = min(p0 + half_tile, half)
            for r in range(r0, r1):
                base = r * half
                for p in range(p0, p1):
                    unit = src64[base + p]
                    k = 2 * (p - p0)
                    scratch[k, r - r0] = np.uint32(unit & _LOW_MASK)
                    scratch[k + 1, r - r0] = np.uint32(unit >> _HALF_SHIFT)
            c0 = 2 * p0
            for c in range(c0, 2 * p1):
                base = c * rows
                for r in range(r0, r1):
                    dst[base + r] = scratch[c - c0, r - r0]


@njit(parallel=True, cache=True)
def _transpose_tiled_wide_write(src, rows, cols, tile, dst64):
    # dst64 is [cols][rows / 2] pairs of 32-bit words, pairs run along the contiguous rows (N) axis
    half = rows // 2
    n_col_tiles = (cols + tile - 1) // tile
    for ct in prange(n_col_tiles):
        scratch = np.empty((tile, tile), dtype=np.uint32)
        c0 = ct * tile
        c1 = min(c0 + tile, cols)
        for r0 in range(0, rows, tile):
            r1 = min(r0 + tile, rows)
            for r in range(r0, r1):
                base = r * cols
                for c in range(c0, c1):
                    scratch[c - c0, r - r0] = src[base + c]
            for c in range(c0, c1):
                base = c * half
                for q in range(r0 // 2, r1 // 2):
                    k = 2 * q - r0
                    lo = np.uint64(scratch[c - c0, k])
                    hi = np.uint64(scratch[c - c0, k + 1])
                    dst64[base + q] = lo | (hi << _HALF_SHIFT)


def transform_naive(t, dst):
    dst = Layout(dst)
    if dst == t.layout:
        return t
    out = np.empty(t.size, dtype=np.float32)
    _permute_naive(t.data, np.array(t.strides, dtype=np.int64), out,
                   np.array(layout_strides(t.dims, dst), dtype=np.int64), *t.dims)
    return Tensor4D._wrap(t.dims, dst, out)


def transform_tiled(t, dst, plan):
    dst = Layout(dst)
    if plan.naive or (t.layout, dst) not in FLATTENABLE_PAIRS:
        raise PlanError(f'{t.layout.name}->{dst.name} cannot be flattened into a 2D transpose')
    if plan.src != t.layout or plan.dst != dst:
        raise PlanError(f'Plan {plan.src.name}->{plan.dst.name} does not match {t.layout.name}->{dst.name}')
    if plan.wide_copy and t.n < WIDE_COPY_MIN_N:
        raise PlanError(f'Wide copy needs N >= {WIDE_COPY_MIN_N}, got N={t.n}')

    chw = t.c * t.h * t.w
    # CHWN is [CHW][N], NCHW is [N][CHW]
    rows, cols = (chw, t.n) if t.layout == Layout.CHWN else (t.n, chw)
    out = np.empty(t.size, dtype=np.float32)

    if plan.wide_copy and t.n % 2 == 0:
        src32 = t.data.view(np.uint32)
        dst32 = out.view(np.uint32)
        if t.layout == Layout.CHWN:
            _transpose_tiled_wide_read(src32.view(np.uint64), rows, cols, plan.tile, dst32)
        else:
            _transpose_tiled_wide_write(src32, rows, cols, plan.tile, dst32.view(np.uint64))
    else:
        if plan.wide_copy:
            logger.debug(form.get_log_step(f'odd N={t.n}, wide copy falls back to single-element moves', 1))
        _transpose_tiled(t.data, rows, cols, plan.tile, out)
    return Tensor4D._wrap(t.dims, dst, out)


def transform(t, dst, plan=None):
    """Move `t` into layout `dst` with the best available method."""
    dst = Layout(dst)
    if dst == t.layout:
        return t
    if plan is None:
        plan = make_plan(t.layout, dst, t.dims)
    if plan.naive:
        return transform_naive(t, dst)
    return transform_tiled(t, dst, plan)
