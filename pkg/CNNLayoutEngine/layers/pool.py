"""
Pooling layer.

Besides the oracle, there are the plain kernels for CHWN and NCHW, which load every window element of every output,
and the coarsened CHWN kernel, in which one task computes an fh x fw block of outputs and loads the union of their
receptive fields exactly once. All kernels count the input loads they issue; counts are kept per task and summed.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit, prange

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.layers.conv import output_extent
from CNNLayoutEngine.layout import PlanError
from CNNLayoutEngine.tensor import Layout, LayoutError, Tensor4D
from CNNLayoutEngine.utils.timing import measure_nanos

logger = logging.getLogger('CLE.Pool')

ACCUMULATOR_CAP = 64
START_FACTOR = 2
IMAGE_CHUNK = 32


class PoolMode(Enum):
    MAX = 'max'
    AVERAGE = 'average'

    @classmethod
    def from_string(cls, name):
        name = name.strip().lower()
        if name == 'avg':
            name = 'average'
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"Unknown pooling mode '{name}'. Supported: max, average")


@dataclass(frozen=True)
class PoolParams:
    win_h: int
    win_w: int
    stride: int
    mode: PoolMode = PoolMode.MAX

    def __post_init__(self):
        if self.win_h < 1 or self.win_w < 1:
            raise ValueError(f'Pooling window has to be at least 1x1, got {self.win_h}x{self.win_w}')
        if self.stride < 1:
            raise ValueError(f'Pooling stride has to be at least 1, got {self.stride}')

    @property
    def overlapped(self):
        return self.stride < max(self.win_h, self.win_w)

    def output_hw(self, h, w):
        return output_extent(h, self.win_h, self.stride), output_extent(w, self.win_w, self.stride)


@dataclass(frozen=True)
class CoarseningPlan:
    fh: int = START_FACTOR
    fw: int = START_FACTOR

    def __post_init__(self):
        if self.fh < 1 or self.fw < 1:
            raise PlanError(f'Coarsening factors have to be at least 1, got {self.fh}x{self.fw}')

    @property
    def accumulators(self):
        return self.fh * self.fw

    def __str__(self):
        return f'{self.fh}x{self.fw}'


@dataclass(frozen=True)
class AccessReport:
    input_loads: int = 0
    output_stores: int = 0
    distinct_inputs: int = 0

    def __add__(self, other):
        return AccessReport(self.input_loads + other.input_loads,
                            self.output_stores + other.output_stores,
                            self.distinct_inputs + other.distinct_inputs)


def _touched(extent_out, win, stride):
    # input rows (or columns) read by at least one window
    return min(stride, win) * (extent_out - 1) + win


def distinct_inputs(in_dims, p):
    n, c, h, w = in_dims
    ho, wo = p.output_hw(h, w)
    return n * c * _touched(ho, p.win_h, p.stride) * _touched(wo, p.win_w, p.stride)


def plain_loads(in_dims, p):
    n, c, h, w = in_dims
    ho, wo = p.output_hw(h, w)
    return n * c * ho * wo * p.win_h * p.win_w


def coarsened_loads(in_dims, p, plan):
    """Closed form of the coarsened kernel's load count: receptive-field unions over the ceil-partitioned tasks."""
    n, c, h, w = in_dims
    ho, wo = p.output_hw(h, w)

    def union_sum(extent_out, factor, win):
        full, rest = divmod(extent_out, factor)
        total = full * _touched(factor, win, p.stride)
        if rest:
            total += _touched(rest, win, p.stride)
        return total

    return n * c * union_sum(ho, plan.fh, p.win_h) * union_sum(wo, plan.fw, p.win_w)


def _mode_code(p):
    return 0 if p.mode == PoolMode.MAX else 1


def pool_oracle(t, p):
    n, c, h, w = t.dims
    ho, wo = p.output_hw(h, w)
    x = t.logical().astype(np.float64)
    windows = np.lib.stride_tricks.sliding_window_view(x, (p.win_h, p.win_w), axis=(2, 3))
    windows = windows[:, :, ::p.stride, ::p.stride][:, :, :ho, :wo]
    if p.mode == PoolMode.MAX:
        out = windows.max(axis=(4, 5))
    else:
        out = windows.sum(axis=(4, 5)) / (p.win_h * p.win_w)
    return Tensor4D.from_logical(out.astype(np.float32), Layout.NCHW)


@njit(parallel=True, cache=True)
def _pool_chwn(x, win_h, win_w, stride, mode, ho, wo, out, loads):
    c, n = x.shape[0], x.shape[3]
    for task in prange(c * ho):
        ch = task // ho
        oy = task % ho
        acc = np.empty(n, dtype=np.float64)
        for ox in range(wo):
            for i in range(n):
                acc[i] = -np.inf if mode == 0 else 0.0
            for fy in range(win_h):
                iy = oy * stride + fy
                for fx in range(win_w):
                    ix = ox * stride + fx
                    for i in range(n):
                        v = x[ch, iy, ix, i]
                        if mode == 0:
                            if v > acc[i]:
                                acc[i] = v
                        else:
                            acc[i] += v
                    loads[task] += n
            for i in range(n):
                if mode == 0:
                    out[ch, oy, ox, i] = acc[i]
                else:
                    out[ch, oy, ox, i] = acc[i] / (win_h * win_w)


@njit(parallel=True, cache=True)
def _pool_nchw(x, win_h, win_w, stride, mode, ho, wo, out, loads):
    n, c = x.shape[0], x.shape[1]
    for task in prange(n * c):
        i = task // c
        ch = task % c
        for oy in range(ho):
            for ox in range(wo):
                acc = -np.inf if mode == 0 else 0.0
                for fy in range(win_h):
                    iy = oy * stride + fy
                    for fx in range(win_w):
                        v = x[i, ch, iy, ox * stride + fx]
                        if mode == 0:
                            if v > acc:
                                acc = v
                        else:
                            acc += v
                    loads[task] += win_w
                if mode == 1:
                    acc = acc / (win_h * win_w)
                out[i, ch, oy, ox] = acc


@njit(parallel=True, cache=True)
def _pool_coarsened_chwn(x, win_h, win_w, stride, mode, ho, wo, fh, fw, chunk, out, loads):
    c, n = x.shape[0], x.shape[3]
    tiles_y = (ho + fh - 1) // fh
    tiles_x = (wo + fw - 1) // fw
    rows_max = stride * (fh - 1) + win_h
    cols_max = stride * (fw - 1) + win_w
    for task in prange(c * tiles_y * tiles_x):
        ch = task // (tiles_y * tiles_x)
        ty = (task // tiles_x) % tiles_y
        tx = task % tiles_x
        oy0 = ty * fh
        oy1 = min(oy0 + fh, ho)
        ox0 = tx * fw
        ox1 = min(ox0 + fw, wo)
        iy0 = oy0 * stride
        ix0 = ox0 * stride
        rows = (oy1 - 1 - oy0) * stride + win_h
        cols = (ox1 - 1 - ox0) * stride + win_w

        buf = np.empty((rows_max, cols_max, chunk), dtype=np.float32)
        acc = np.empty(chunk, dtype=np.float64)
        for n0 in range(0, n, chunk):
            nb = min(chunk, n - n0)
            # load the union of the receptive fields once; rows and columns in stride gaps are skipped
            for r in range(rows):
                if r % stride >= win_h:
                    continue
                for q in range(cols):
                    if q % stride >= win_w:
                        continue
                    for b in range(nb):
                        buf[r, q, b] = x[ch, iy0 + r, ix0 + q, n0 + b]
                    loads[task] += nb
            for oy in range(oy0, oy1):
                ry = (oy - oy0) * stride
                for ox in range(ox0, ox1):
                    rx = (ox - ox0) * stride
                    for b in range(nb):
                        acc[b] = -np.inf if mode == 0 else 0.0
                    for fy in range(win_h):
                        for fx in range(win_w):
                            for b in range(nb):
                                v = buf[ry + fy, rx + fx, b]
                                if mode == 0:
                                    if v > acc[b]:
                                        acc[b] = v
                                else:
                                    acc[b] += v
                    for b in range(nb):
                        if mode == 0:
                            out[ch, oy, ox, n0 + b] = acc[b]
                        else:
                            out[ch, oy, ox, n0 + b] = acc[b] / (win_h * win_w)


def _report(t, p, out_dims, loads):
    return AccessReport(input_loads=int(loads.sum()),
                        output_stores=int(np.prod(out_dims)),
                        distinct_inputs=distinct_inputs(t.dims, p))


def pool_layout(t, p):
    n, c, h, w = t.dims
    ho, wo = p.output_hw(h, w)
    out_dims = (n, c, ho, wo)
    if t.layout == Layout.CHWN:
        out = np.empty((c, ho, wo, n), dtype=np.float32)
        loads = np.zeros(c * ho, dtype=np.int64)
        _pool_chwn(t.physical(), p.win_h, p.win_w, p.stride, _mode_code(p), ho, wo, out, loads)
    elif t.layout == Layout.NCHW:
        out = np.empty(out_dims, dtype=np.float32)
        loads = np.zeros(n * c, dtype=np.int64)
        _pool_nchw(t.physical(), p.win_h, p.win_w, p.stride, _mode_code(p), ho, wo, out, loads)
    else:
        raise LayoutError(f'No pooling kernel for {t.layout.name}')
    return Tensor4D._wrap(out_dims, t.layout, out.reshape(-1)), _report(t, p, out_dims, loads)


def pool_coarsened(t, p, plan, cap=ACCUMULATOR_CAP):
    if t.layout != Layout.CHWN:
        raise LayoutError(f'Coarsened pooling expects a CHWN tensor, got {t.layout.name}')
    if plan.accumulators > cap:
        raise PlanError(f'Coarsening plan {plan} needs {plan.accumulators} accumulators, the cap is {cap}')
    n, c, h, w = t.dims
    ho, wo = p.output_hw(h, w)
    out_dims = (n, c, ho, wo)
    tiles = c * -(-ho // plan.fh) * -(-wo // plan.fw)
    out = np.empty((c, ho, wo, n), dtype=np.float32)
    loads = np.zeros(tiles, dtype=np.int64)
    _pool_coarsened_chwn(t.physical(), p.win_h, p.win_w, p.stride, _mode_code(p), ho, wo, plan.fh, plan.fw,
                         min(IMAGE_CHUNK, n), out, loads)
    return Tensor4D._wrap(out_dims, Layout.CHWN, out.reshape(-1)), _report(t, p, out_dims, loads)


TUNED_PLANS_LIMIT = 256
_TUNED_PLANS = {}


def clear_tuned_plans():
    _TUNED_PLANS.clear()


def default_pool_measure(in_dims, p, repeats=5, seed=42):
    t = Tensor4D.random(in_dims, Layout.CHWN, seed=seed)

    def measure(plan):
        return measure_nanos(lambda: pool_coarsened(t, p, plan, cap=plan.accumulators), repeats=repeats)

    return measure


def autotune_pool(in_dims, p, measure=None, cap=ACCUMULATOR_CAP):
    """
    Hill climb over the coarsening factors, starting from 2x2.

    fh and fw are increased alternately by one while the measured cost keeps dropping; a direction stops at its first
    non-improvement, at the accumulator cap, or once the factor exceeds the output extent. Results of the default
    wall-clock measurement are cached per (shape, params, cap), at most TUNED_PLANS_LIMIT of them.
    """
    key = (tuple(in_dims), p, cap)
    if measure is None:
        if key in _TUNED_PLANS:
            return _TUNED_PLANS[key]
        measure_func = default_pool_measure(in_dims, p)
    else:
        measure_func = measure

    ho, wo = p.output_hw(in_dims[2], in_dims[3])
    costs = {}

    def cost(plan):
        if plan not in costs:
            costs[plan] = measure_func(plan)
            logger.debug(form.get_log_step(f'coarsening {plan}: cost {costs[plan]}', 1))
        return costs[plan]

    start = START_FACTOR
    while start > 1 and start * start > cap:
        start -= 1
    best = CoarseningPlan(start, start)
    best_cost = cost(best)
    active = {'fh': True, 'fw': True}
    while any(active.values()):
        for direction in ('fh', 'fw'):
            if not active[direction]:
                continue
            cand = CoarseningPlan(best.fh + 1, best.fw) if direction == 'fh' else CoarseningPlan(best.fh, best.fw + 1)
            extent = ho if direction == 'fh' else wo
            if cand.accumulators > cap or getattr(cand, direction) > extent:
                active[direction] = False
                continue
            cand_cost = cost(cand)
            if cand_cost < best_cost:
                best, best_cost = cand, cand_cost
            else:
                active[direction] = False

    logger.info(f'Tuned coarsening for {form.dims_to_string(in_dims)}: {best} after {len(costs)} measurements')
    if measure is None:
        if len(_TUNED_PLANS) >= TUNED_PLANS_LIMIT:
            # oldest entry first
            _TUNED_PLANS.pop(next(iter(_TUNED_PLANS)))
        _TUNED_PLANS[key] = best
    return best
