import logging

import pandas as pd

import CNNLayoutEngine.utils.formatting as form
from CNNLayoutEngine.utils.unit_conversion import nanos_to_millis

logger = logging.getLogger('CLE.Network')

COLUMNS = ['layer', 'kind', 'layout', 'algorithm', 'nanos', 'input_loads', 'output_stores']


class TimingEntry:
    layer: str
    kind: str  # layer kind, or 'transform'
    layout: str  # layout used, 'SRC->DST' for transforms
    algorithm: str
    nanos: int
    input_loads: int  # None where no AccessReport exists
    output_stores: int

    def __init__(self, layer, kind, layout, algorithm, nanos, input_loads=None, output_stores=None):
        self.layer = layer
        self.kind = kind
        self.layout = layout
        self.algorithm = algorithm
        self.nanos = int(nanos)
        self.input_loads = input_loads
        self.output_stores = output_stores

    @property
    def is_transform(self):
        return self.kind == 'transform'

    def as_row(self):
        return [self.layer, self.kind, self.layout, self.algorithm, self.nanos, self.input_loads, self.output_stores]


class TimingReport:
    """Per-layer and per-transform wall clock of one network run, in execution order."""

    entries: list

    def __init__(self):
        self.entries = []

    def add_layer(self, layer, layout, algorithm, nanos, access=None):
        loads = access.input_loads if access is not None else None
        stores = access.output_stores if access is not None else None
        self.entries.append(TimingEntry(layer.name, layer.kind.value, layout, algorithm, nanos, loads, stores))

    def add_transform(self, position, before_layer, src, dst, method, nanos):
        self.entries.append(TimingEntry(f'transform@{position}:{before_layer}', 'transform',
                                        f'{src.name}->{dst.name}', method, nanos))

    @property
    def transforms(self):
        return [e for e in self.entries if e.is_transform]

    @property
    def total_nanos(self):
        return sum(e.nanos for e in self.entries)

    def to_dataframe(self):
        df = pd.DataFrame([e.as_row() for e in self.entries], columns=COLUMNS)
        return df.astype({'input_loads': 'Int64', 'output_stores': 'Int64'})

    def write_csv(self, path_or_buf):
        self.to_dataframe().to_csv(path_or_buf, index=False)

    def print(self):
        logger.info(form.get_line_string())
        for e in self.entries:
            logger.info(form.get_log_step(f'{e.layer:<24} {e.layout:<12} {e.algorithm:<16} '
                                          f'{nanos_to_millis(e.nanos):10.3f} ms', 0))
        logger.info(form.get_log_step(f'total {nanos_to_millis(self.total_nanos):.3f} ms over '
                                      f'{len(self.entries)} entries ({len(self.transforms)} transforms)', 0))
        logger.info(form.get_line_string())
