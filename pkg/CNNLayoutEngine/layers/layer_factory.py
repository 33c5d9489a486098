import logging

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.layers.conv import CONV_ALGORITHMS
from CNNLayoutEngine.layers.pool import CoarseningPlan, autotune_pool, pool_coarsened, pool_layout
from CNNLayoutEngine.tensor import Layout, LayoutError

logger = logging.getLogger('CLE.Layers')


class ConvAlgFactory:

    @staticmethod
    def get_conv_alg(layout, use_fft=False, stride=1):
        """
        Algorithm name and callable for a convolution on `layout`: direct for CHWN, GEMM for NCHW, or FFT for NCHW
        when requested. The FFT path falls back to GEMM for strides it does not support.
        """
        layout = Layout(layout)
        if layout == Layout.CHWN:
            name = 'direct'
        elif layout == Layout.NCHW:
            name = 'gemm'
            if use_fft:
                if stride == 1:
                    name = 'fft'
                else:
                    logger.info(form.get_log_step(f'FFT does not support stride {stride}, using GEMM', 1))
        else:
            raise LayoutError(f'No convolution algorithm for {layout.name}')
        return name, CONV_ALGORITHMS[name]


class PoolAlgFactory:

    @staticmethod
    def get_pool_alg(layout, in_dims, params, coarsening=None, cap=64):
        """
        Algorithm name and a callable `t -> (Tensor4D, AccessReport)` for pooling on `layout`.

        CHWN runs the coarsened kernel with `coarsening`, which is a CoarseningPlan, a [fh, fw] pair or 'autotune';
        without one, and for NCHW, the plain kernel is used.
        """
        layout = Layout(layout)
        if layout not in (Layout.CHWN, Layout.NCHW):
            raise LayoutError(f'No pooling algorithm for {layout.name}')
        if layout == Layout.NCHW or coarsening is None:
            return 'plain', lambda t: pool_layout(t, params)

        if coarsening == 'autotune':
            plan = autotune_pool(in_dims, params, cap=cap)
        elif isinstance(coarsening, CoarseningPlan):
            plan = coarsening
        else:
            plan = CoarseningPlan(*coarsening)
        return f'coarsened-{plan}', lambda t: pool_coarsened(t, params, plan, cap=cap)
