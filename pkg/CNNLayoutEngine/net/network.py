"""
Network execution.

The annotation pass sets the layout of every conv and pool layer in one forward scan. Transforms are planned between
adjacent 4D layers whose layouts differ; the classifier tail reads CHWN and NCHW feature maps directly, so it never
needs one. The runner executes the layers in order with the preferred algorithm of each layout and records the wall
clock of every layer and transform.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.config import Config
from CNNLayoutEngine.layers.layer_factory import ConvAlgFactory, PoolAlgFactory
from CNNLayoutEngine.layers.softmax import as_matrix, fc_forward, softmax_fused
from CNNLayoutEngine.layout import make_plan, transform
from CNNLayoutEngine.layout_selection import LayerKind, choose_layout
from CNNLayoutEngine.net.network_spec import check_annotated
from CNNLayoutEngine.net.timing_report import TimingReport
from CNNLayoutEngine.tensor import FilterBank, Layout, ShapeError, Tensor4D
from CNNLayoutEngine.utils.timing import measure_nanos, time_call

logger = logging.getLogger('CLE.Network')


class LayerExecutionError(RuntimeError):

    def __init__(self, layer, cause):
        self.layer = layer
        super().__init__(f"layer '{layer}' failed: {cause}")


@dataclass(frozen=True)
class TransformStep:
    position: int  # index of the layer that consumes the transformed tensor
    src: Layout
    dst: Layout


def annotate_layouts(spec, th):
    annotated = spec.copy()
    for layer in annotated.layers:
        if layer.layout_override:
            continue
        n, c = layer.in_dims[0], layer.in_dims[1]
        layer.layout = choose_layout(layer.kind, n, c, th) if layer.kind.is_4d else None
    return annotated


def set_all_layouts(spec, layout):
    """Copy of `spec` with every conv and pool layer pinned to `layout`."""
    pinned = spec.copy()
    for layer in pinned.layers:
        if layer.kind.is_4d:
            layer.layout = Layout(layout)
            layer.layout_override = True
    return pinned


def plan_transforms(spec, input_layout=None):
    check_annotated(spec)
    steps = []
    current = input_layout
    for i, layer in enumerate(spec.layers):
        if not layer.kind.is_4d:
            break
        if current is not None and current != layer.layout:
            steps.append(TransformStep(i, current, layer.layout))
        current = layer.layout
    return steps


def init_weights(spec, seed=42):
    """Seeded uniform weights in +-1/sqrt(fan_in) for every conv and fc layer."""
    rng = np.random.default_rng(seed)
    weights = {}
    for layer in spec.layers:
        if layer.kind not in (LayerKind.CONVOLUTION, LayerKind.FULLY_CONNECTED):
            continue
        bound = 1.0 / np.sqrt(layer.fan_in)
        if layer.kind == LayerKind.CONVOLUTION:
            data = rng.uniform(-bound, bound, size=int(np.prod(layer.filter_dims))).astype(np.float32)
            weights[layer.name] = FilterBank(layer.filter_dims, data)
        else:
            weights[layer.name] = rng.uniform(-bound, bound, size=(layer.fan_in, layer.out)).astype(np.float32)
    return weights


class NetworkRunner:
    """Runs an annotated NetworkSpec with the algorithm and tuning settings of a Config."""

    use_fft: bool
    pool_coarsening: object  # [fh, fw], 'autotune' or None for the plain kernel
    accumulator_cap: int
    gemm_block: int
    transform_tile: int
    softmax_block: int
    softmax_local_buffer: int

    def __init__(self, config=None):
        if config is None:
            config = Config(init_mode='default')
        self.use_fft = config.USE_FFT
        self.pool_coarsening = config.POOL_COARSENING
        self.accumulator_cap = config.POOL_ACCUMULATOR_CAP
        self.gemm_block = config.GEMM_BLOCK
        self.transform_tile = config.TRANSFORM_TILE
        self.softmax_block = config.SOFTMAX_BLOCK
        self.softmax_local_buffer = config.SOFTMAX_LOCAL_BUFFER

    def run(self, spec, t, weights=None, seed=42):
        check_annotated(spec)
        if t.dims != spec.input_dims:
            raise ShapeError(f'Input dims {t.dims} do not match the network input {spec.input_dims}')
        if weights is None:
            weights = init_weights(spec, seed)

        steps = {step.position: step for step in plan_transforms(spec, input_layout=t.layout)}
        report = TimingReport()
        x = t
        for i, layer in enumerate(spec.layers):
            if i in steps:
                step = steps[i]
                plan = make_plan(step.src, step.dst, x.dims, tile=self.transform_tile)
                x, nanos = time_call(transform, x, step.dst, plan)
                report.add_transform(i, layer.name, step.src, step.dst, plan.method, nanos)
            try:
                x = self._run_layer(layer, x, weights, report)
            except Exception as e:
                raise LayerExecutionError(layer.name, e) from e
        report.print()
        return x, report

    def _run_layer(self, layer, x, weights, report):
        if layer.kind == LayerKind.CONVOLUTION:
            name, conv = ConvAlgFactory.get_conv_alg(x.layout, self.use_fft, layer.stride)
            kwargs = {'block': self.gemm_block} if name == 'gemm' else {}
            out, nanos = time_call(conv, x, weights[layer.name], layer.conv_params, **kwargs)
            report.add_layer(layer, x.layout.name, name, nanos)
            return out

        if layer.kind == LayerKind.POOLING:
            coarsening = self.pool_coarsening if x.layout == Layout.CHWN else None
            name, pool = PoolAlgFactory.get_pool_alg(x.layout, x.dims, layer.pool_params, coarsening,
                                                     cap=self.accumulator_cap)
            (out, access), nanos = time_call(pool, x)
            report.add_layer(layer, x.layout.name, name, nanos, access)
            return out

        matrix = as_matrix(x) if isinstance(x, Tensor4D) else x
        if layer.kind == LayerKind.FULLY_CONNECTED:
            out, nanos = time_call(fc_forward, matrix, weights[layer.name], self.gemm_block)
            report.add_layer(layer, Layout.NCHW.name, 'gemm', nanos)
            return out

        (out, _), nanos = time_call(softmax_fused, matrix, self.softmax_block, self.softmax_local_buffer)
        report.add_layer(layer, Layout.NCHW.name, 'fused', nanos)
        return out


def run_network(spec, t, weights=None, seed=42, config=None):
    return NetworkRunner(config).run(spec, t, weights=weights, seed=seed)


def _transform_cost(dims, src, dst, repeats, seed):
    if src is None or dst is None or src == dst:
        return 0
    t = Tensor4D.random(dims, src, seed=seed)
    plan = make_plan(src, dst, dims)
    return measure_nanos(lambda: transform(t, dst, plan), repeats=repeats)


def profile_refine(spec, weights=None, seed=42, repeats=1, use_fft=False):
    """
    One-time profiling pass over an annotated spec.

    Each conv layer whose layout was not pinned by the config is timed under CHWN and NCHW, each including the
    transforms it would cause with its neighbours; the layout flips when the alternative is faster. Returns the refined
    spec and the profiling table.
    """
    check_annotated(spec)
    refined = spec.copy()
    if weights is None:
        weights = init_weights(refined, seed)
    rows = []
    for i, layer in enumerate(refined.layers):
        if layer.kind != LayerKind.CONVOLUTION or layer.layout_override:
            continue
        prev_layout = refined.layers[i - 1].layout if i > 0 else None
        nxt = refined.layers[i + 1] if i + 1 < len(refined.layers) else None
        next_layout = nxt.layout if nxt is not None and nxt.kind.is_4d else None

        costs = {}
        for layout in (Layout.CHWN, Layout.NCHW):
            name, conv = ConvAlgFactory.get_conv_alg(layout, use_fft, layer.stride)
            t = Tensor4D.random(layer.in_dims, layout, seed=seed)
            nanos = measure_nanos(lambda: conv(t, weights[layer.name], layer.conv_params), repeats=repeats)
            nanos += _transform_cost(layer.in_dims, prev_layout, layout, repeats, seed)
            nanos += _transform_cost(layer.out_dims, layout, next_layout, repeats, seed)
            costs[layout] = nanos
            rows.append({'layer': layer.name, 'layout': layout.name, 'algorithm': name, 'nanos': nanos})

        best = min(costs, key=costs.get)
        if best != layer.layout:
            logger.info(form.get_log_step(f'{layer.name}: profiling flips {layer.layout.name} -> {best.name}', 1))
            layer.layout = best
    return refined, pd.DataFrame(rows, columns=['layer', 'layout', 'algorithm', 'nanos'])
