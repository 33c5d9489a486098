"""
Layer and transform micro-benchmarks.

Every timed row is preceded by a check against the oracle of its layer; a mismatch aborts with the fixture id instead
of reporting the timing of a wrong answer.
"""
import logging

import numpy as np
import pandas as pd

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.layers.conv import CONV_ALGORITHMS, UnsupportedParameterError, conv_oracle
from CNNLayoutEngine.layers.pool import CoarseningPlan, PoolMode, pool_coarsened, pool_layout, pool_oracle
from CNNLayoutEngine.layers.softmax import softmax_fused, softmax_reference
from CNNLayoutEngine.layout import WIDE_COPY_MIN_N, TransformPlan, transform_naive, transform_tiled
from CNNLayoutEngine.tensor import FilterBank, Layout, Tensor4D, approx_equal
from CNNLayoutEngine.utils.timing import measure_nanos
from CNNLayoutEngine.utils.unit_conversion import bandwidth_gbps, elements_to_bytes

logger = logging.getLogger('CLE.Bench')

LAYER_COLUMNS = ['fixture', 'layout', 'algorithm', 'nanos', 'gbytes_per_s', 'input_loads', 'verified']
TRANSFORM_COLUMNS = ['dims', 'method', 'nanos', 'gbytes_per_s']

CONV_TOLERANCE = {'direct': 1e-5, 'gemm': 1e-5, 'fft': 1e-3}
CONV_LAYOUTS = {'direct': (Layout.CHWN, Layout.NCHW), 'gemm': (Layout.NCHW,), 'fft': (Layout.NCHW,)}
DEFAULT_CONV_ALGORITHM = {Layout.CHWN: 'direct', Layout.NCHW: 'gemm'}
POOL_ALGORITHMS = ('plain', 'coarsened')
SOFTMAX_ALGORITHMS = ('reference', 'fused')
VERIFIED = 'yes'
NOT_APPLICABLE = 'N/A'


class VerificationError(RuntimeError):

    def __init__(self, fixture_id, detail):
        self.fixture_id = fixture_id
        super().__init__(f'{fixture_id}: result does not match the oracle ({detail})')


def _row(fixture, layout, algorithm, nanos, nbytes, input_loads=None, verified=VERIFIED):
    return {'fixture': fixture.id, 'layout': layout, 'algorithm': algorithm, 'nanos': nanos,
            'gbytes_per_s': bandwidth_gbps(nbytes, nanos) if nanos else None,
            'input_loads': input_loads, 'verified': verified}


def _skipped(fixture, layout, algorithm, reason):
    logger.info(form.get_log_step(f'{fixture.id} {layout} {algorithm}: skipped, {reason}', 1))
    return _row(fixture, layout, algorithm, None, 0, verified=f'skipped: {reason}')


def _bench_conv(fixture, layouts, algorithms, repeats, seed):
    t_nchw = Tensor4D.random(fixture.input_dims, Layout.NCHW, seed=seed)
    f = FilterBank.random(fixture.filter_dims, seed=seed + 1)
    p = fixture.conv_params
    oracle = conv_oracle(t_nchw, f, p)
    nbytes = elements_to_bytes(t_nchw.size + f.data.size + oracle.size)

    rows = []
    for layout in layouts:
        t = Tensor4D.from_logical(t_nchw.logical(), layout)
        names = algorithms if algorithms else [DEFAULT_CONV_ALGORITHM[layout]]
        for name in names:
            if layout not in CONV_LAYOUTS[name]:
                continue
            conv = CONV_ALGORITHMS[name]
            try:
                out = conv(t, f, p)
            except UnsupportedParameterError:
                rows.append(_skipped(fixture, layout.name, name, 'stride unsupported'))
                continue
            if not approx_equal(out, oracle, CONV_TOLERANCE[name]):
                raise VerificationError(fixture.id, f'{name} on {layout.name}')
            nanos = measure_nanos(lambda: conv(t, f, p), repeats=repeats)
            rows.append(_row(fixture, layout.name, name, nanos, nbytes))
    return rows


def _bench_pool(fixture, layouts, algorithms, repeats, seed, mode, plan):
    p = fixture.pool_params(mode)
    t_nchw = Tensor4D.random(fixture.input_dims, Layout.NCHW, seed=seed)
    oracle = pool_oracle(t_nchw, p)
    tolerance = 0.0 if mode == PoolMode.MAX else 1e-6

    rows = []
    for layout in layouts:
        t = Tensor4D.from_logical(t_nchw.logical(), layout)
        for name in algorithms or POOL_ALGORITHMS:
            if name == 'plain':
                run, label = (lambda: pool_layout(t, p)), 'plain'
            elif layout == Layout.CHWN:
                run, label = (lambda: pool_coarsened(t, p, plan)), f'coarsened-{plan}'
            else:
                continue
            out, access = run()
            if not approx_equal(out, oracle, tolerance):
                raise VerificationError(fixture.id, f'{label} on {layout.name}')
            nanos = measure_nanos(run, repeats=repeats)
            nbytes = elements_to_bytes(access.input_loads + access.output_stores)
            rows.append(_row(fixture, layout.name, label, nanos, nbytes, input_loads=access.input_loads))
    return rows


def _bench_softmax(fixture, algorithms, repeats, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-10.0, 10.0, size=(fixture.n, fixture.c)).astype(np.float32)
    reference, ref_report = softmax_reference(x, return_report=True)
    if not np.allclose(reference.sum(axis=1, dtype=np.float64), 1.0, rtol=0.0, atol=1e-6):
        raise VerificationError(fixture.id, 'reference rows do not sum to 1')

    rows = []
    for name in algorithms or SOFTMAX_ALGORITHMS:
        if name == 'reference':
            func, report = softmax_reference, ref_report
        elif name == 'fused':
            out, report = softmax_fused(x)
            if not np.allclose(out, reference, rtol=1e-6, atol=1e-7):
                raise VerificationError(fixture.id, 'fused softmax')
            func = softmax_fused
        else:
            continue
        nanos = measure_nanos(lambda: func(x), repeats=repeats)
        traffic = report.element_traffic(fixture.n, fixture.c)
        rows.append(_row(fixture, Layout.NCHW.name, name, nanos, elements_to_bytes(traffic), input_loads=traffic))
    return rows


def bench_layer(fixture, layouts=(Layout.CHWN, Layout.NCHW), algorithms=None, repeats=5, seed=42,
                pool_mode=PoolMode.MAX, coarsening=CoarseningPlan(2, 2)):
    """
    Benchmark rows of one fixture, one per (layout, algorithm) pair.

    Without `algorithms`, conv fixtures run the preferred algorithm of each layout (direct on CHWN, GEMM on NCHW),
    pooling fixtures the plain kernels plus the coarsened CHWN kernel, and classifier fixtures both softmax variants.
    """
    logger.info(f'Benchmarking {fixture.id} ({fixture.kind}, {form.dims_to_string(fixture.input_dims)}, '
                f'scale {fixture.scale})')
    layouts = [Layout(la) for la in layouts]
    if fixture.kind == 'conv':
        rows = _bench_conv(fixture, layouts, algorithms, repeats, seed)
    elif fixture.kind == 'pool':
        rows = _bench_pool(fixture, layouts, algorithms, repeats, seed, pool_mode, coarsening)
    else:
        rows = _bench_softmax(fixture, algorithms, repeats, seed)
    df = pd.DataFrame(rows, columns=LAYER_COLUMNS)
    return df.astype({'nanos': 'Int64', 'input_loads': 'Int64'})


def bench_transform(dims, repeats=5, seed=42, tile=32):
    """CHWN -> NCHW rows for the naive, tiled and tiled+wide methods; wide copy is N/A below N=64."""
    t = Tensor4D.random(dims, Layout.CHWN, seed=seed)
    nbytes = 2 * t.nbytes
    oracle = transform_naive(t, Layout.NCHW)
    label = form.dims_to_string(dims)

    naive_nanos = measure_nanos(lambda: transform_naive(t, Layout.NCHW), repeats=repeats)
    rows = [{'dims': label, 'method': 'naive', 'nanos': naive_nanos,
             'gbytes_per_s': bandwidth_gbps(nbytes, naive_nanos)}]
    for wide in (False, True):
        method = 'tiled+wide' if wide else 'tiled'
        if wide and t.n < WIDE_COPY_MIN_N:
            rows.append({'dims': label, 'method': method, 'nanos': NOT_APPLICABLE, 'gbytes_per_s': NOT_APPLICABLE})
            continue
        plan = TransformPlan(Layout.CHWN, Layout.NCHW, tile=tile, wide_copy=wide)
        out = transform_tiled(t, Layout.NCHW, plan)
        if not np.array_equal(out.data, oracle.data):
            raise VerificationError(label, f'{method} transform')
        nanos = measure_nanos(lambda: transform_tiled(t, Layout.NCHW, plan), repeats=repeats)
        rows.append({'dims': label, 'method': method, 'nanos': nanos, 'gbytes_per_s': bandwidth_gbps(nbytes, nanos)})
    return pd.DataFrame(rows, columns=TRANSFORM_COLUMNS)
