"""
Data layout selection.

Pooling always runs on CHWN. A convolution runs on CHWN when its input has fewer than c_t channels or its batch holds
at least n_t images, and on NCHW otherwise. The thresholds come from a named preset or from a one-time calibration
sweep on the host, which is persisted as a one-line record.
"""
import logging
import platform
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

import pandas as pd

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.layers.conv import ConvParams, conv_direct, conv_gemm
from CNNLayoutEngine.tensor import FilterBank, Layout, Tensor4D
from CNNLayoutEngine.utils.timing import measure_nanos

logger = logging.getLogger('CLE.Select')

N_SWEEP = (16, 32, 64, 128)
C_SWEEP = (3, 16, 32, 64, 128, 256)
FINE_N_SWEEP = (8, 16, 24, 32, 48, 64, 96, 128)
FINE_C_SWEEP = (1, 3, 8, 16, 24, 32, 48, 64, 96, 128, 192, 256)
FIXED_N = 64

CALIBRATION_RECORD = re.compile(r'^c_t=(\d+)\s+n_t=(\d+)\s+host=(\S*)\s+timestamp=(\S+)\s*$')


class CalibrationError(RuntimeError):

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class HeuristicThresholds:
    c_t: int
    n_t: int

    def __post_init__(self):
        if self.c_t < 1 or self.n_t < 1:
            raise ValueError(f'Thresholds have to be at least 1, got c_t={self.c_t}, n_t={self.n_t}')


class LayerKind(Enum):
    CONVOLUTION = 'conv'
    POOLING = 'pool'
    SOFTMAX = 'softmax'
    FULLY_CONNECTED = 'fc'
    INPUT = 'input'

    @property
    def is_4d(self):
        return self in (LayerKind.CONVOLUTION, LayerKind.POOLING)


PRESETS = {
    'titan-black': HeuristicThresholds(c_t=32, n_t=128),
    'titan-x': HeuristicThresholds(c_t=128, n_t=64),
}


def get_preset(name):
    try:
        return PRESETS[name.strip().lower()]
    except KeyError:
        raise ValueError(f"Unknown layout preset '{name}'. Supported: {', '.join(PRESETS)}")


def choose_layout(kind, n, c, th):
    kind = LayerKind(kind)
    if kind == LayerKind.POOLING:
        return Layout.CHWN
    if kind == LayerKind.CONVOLUTION:
        if c < th.c_t or n >= th.n_t:
            return Layout.CHWN
        return Layout.NCHW
    return Layout.NCHW


def run_calibration_sweep(bench, fine=False):
    """
    Time `bench(layout, n, c)` for CHWN and NCHW over the N sweep (C fixed at the largest swept C) and the C sweep
    (N fixed at 64). Measurements run strictly one after another.
    """
    n_sweep, c_sweep = (FINE_N_SWEEP, FINE_C_SWEEP) if fine else (N_SWEEP, C_SWEEP)
    points = [('n', n, c_sweep[-1]) for n in n_sweep] + [('c', FIXED_N, c) for c in c_sweep]
    rows = []
    for sweep, n, c in points:
        row = {'sweep': sweep, 'n': n, 'c': c}
        for layout in (Layout.CHWN, Layout.NCHW):
            try:
                row[layout.name.lower()] = bench(layout, n, c)
            except Exception as e:
                partial = pd.DataFrame(rows, columns=['sweep', 'n', 'c', 'chwn', 'nchw'])
                raise CalibrationError(f'Measurement of {layout.name} at n={n}, c={c} failed: {e}', partial) from e
        logger.debug(form.get_log_step(f"{sweep}-sweep n={n} c={c}: chwn={row['chwn']} nchw={row['nchw']}", 1))
        rows.append(row)
    return pd.DataFrame(rows, columns=['sweep', 'n', 'c', 'chwn', 'nchw'])


def thresholds_from_sweep(table):
    c_rows = table[table['sweep'] == 'c'].sort_values('c')
    n_rows = table[table['sweep'] == 'n'].sort_values('n')

    # NCHW wins ties, CHWN has to be strictly faster
    nchw_wins = c_rows[c_rows['nchw'] <= c_rows['chwn']]
    c_t = int(nchw_wins['c'].iloc[0]) if len(nchw_wins) else int(c_rows['c'].max()) + 1
    chwn_wins = n_rows[n_rows['chwn'] < n_rows['nchw']]
    n_t = int(chwn_wins['n'].iloc[0]) if len(chwn_wins) else int(n_rows['n'].max()) + 1
    return HeuristicThresholds(c_t=c_t, n_t=n_t)


def calibrate(bench, fine=False, calibration_file=None, return_table=False):
    """
    Sweep, derive the thresholds and persist them to `calibration_file` if one is given. With `return_table` the sweep
    table is returned along with the thresholds. A failing measurement raises CalibrationError carrying the rows
    measured so far, and nothing is written.
    """
    table = run_calibration_sweep(bench, fine=fine)
    th = thresholds_from_sweep(table)
    logger.info(f'Calibrated thresholds: c_t={th.c_t}, n_t={th.n_t}')
    if calibration_file:
        write_calibration(calibration_file, th)
    if return_table:
        return th, table
    return th


def conv7_bench(scale=8, repeats=3, seed=42):
    """
    Measurement function for the calibration sweep: direct CHWN against GEMM NCHW on a 13x13, 3x3, pad 1 layer
    shaped like CV7, with the 384 output channels divided by `scale`.
    """
    c_out = max(1, 384 // scale)
    params = ConvParams(stride=1, pad=1)

    def bench(layout, n, c):
        t = Tensor4D.random((n, c, 13, 13), layout, seed=seed)
        f = FilterBank.random((c_out, c, 3, 3), seed=seed + 1)
        conv = conv_direct if layout == Layout.CHWN else conv_gemm
        return measure_nanos(lambda: conv(t, f, params), repeats=repeats)

    return bench


def write_calibration(path, th):
    timestamp = datetime.now(timezone.utc).isoformat(timespec='seconds')
    host = platform.node() or 'unknown'
    with open(path, 'w') as f:
        f.write(f'c_t={th.c_t} n_t={th.n_t} host={host} timestamp={timestamp}\n')
    logger.info(f'Calibration written to {path}')


def read_calibration(path):
    with open(path) as f:
        record = f.readline()
    match = CALIBRATION_RECORD.match(record)
    if match is None:
        raise ValueError(f"{path}: not a calibration record: '{record.strip()}'")
    logger.info(f'Calibration of host {match.group(3)} from {match.group(4)}')
    return HeuristicThresholds(c_t=int(match.group(1)), n_t=int(match.group(2)))
