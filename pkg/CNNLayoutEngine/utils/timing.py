import logging
import time

import numba
import numpy as np

logger = logging.getLogger('CLE.Timing')


def measure_nanos(func, repeats=5, warmup=1):
    """
    Median wall-clock of `func()` over `repeats` runs, in nanoseconds.

    The first `warmup` runs are discarded; they also absorb kernel compilation.
    """
    if repeats < 1:
        raise ValueError('repeats has to be at least 1')
    for _ in range(warmup):
        func()
    samples = np.empty(repeats, dtype=np.int64)
    for i in range(repeats):
        start = time.perf_counter_ns()
        func()
        samples[i] = time.perf_counter_ns() - start
    return int(np.median(samples))


def time_call(func, *args, **kwargs):
    start = time.perf_counter_ns()
    result = func(*args, **kwargs)
    return result, time.perf_counter_ns() - start


def set_serial(serial=True):
    if serial:
        numba.set_num_threads(1)
        logger.info('Kernels pinned to a single worker thread')
    else:
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
