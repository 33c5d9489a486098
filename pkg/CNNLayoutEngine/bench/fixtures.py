"""
Benchmark fixtures: the conv, pooling and classifier layers of LeNet, the CIFAR net, AlexNet, ZFNet and VGG.

Published shapes carry no padding. Conv pads are an assumption per layer: 0 where the network shrinks the maps
(LeNet CV1-CV2, ZFNet CV5-CV6), 2 for the 5x5 CIFAR layers (CV3-CV4) and 1 for the 3x3 layers that keep their
extent (CV7-CV12).
"""
import logging
from dataclasses import dataclass, replace
from typing import Optional

import pandas as pd

from CNNLayoutEngine.layers.conv import ConvParams
from CNNLayoutEngine.layers.pool import PoolMode, PoolParams

logger = logging.getLogger('CLE.Bench')

DEFAULT_SCALE = 8
DEFAULT_HW_CAP = 64


@dataclass(frozen=True)
class Fixture:
    id: str
    kind: str  # 'conv', 'pool' or 'softmax'
    n: int
    c: int  # input channels, pooled channels or categories
    h: int = 1
    w: int = 1
    f: Optional[int] = None  # conv filter or pooling window edge
    c_out: Optional[int] = None
    stride: int = 1
    pad: int = 0
    scale: int = 1

    def __post_init__(self):
        if min(self.n, self.c, self.h, self.w) < 1:
            raise ValueError(f'Fixture {self.id} has a dimension below 1')

    @property
    def input_dims(self):
        return self.n, self.c, self.h, self.w

    @property
    def filter_dims(self):
        return self.c_out, self.c, self.f, self.f

    @property
    def conv_params(self):
        return ConvParams(stride=self.stride, pad=self.pad)

    def pool_params(self, mode=PoolMode.MAX):
        return PoolParams(win_h=self.f, win_w=self.f, stride=self.stride, mode=mode)

    def scaled(self, scale=DEFAULT_SCALE, hw_cap=DEFAULT_HW_CAP):
        """Divide N by `scale` and, for scale > 1, cap H and W at `hw_cap`."""
        if scale < 1:
            raise ValueError('Scale has to be at least 1')
        if scale == 1:
            return self
        h, w = self.h, self.w
        if self.kind != 'softmax':
            h, w = min(h, hw_cap), min(w, hw_cap)
        return replace(self, n=max(1, self.n // scale), h=h, w=w, scale=scale)

    def as_row(self):
        return {'id': self.id, 'kind': self.kind, 'n': self.n, 'c': self.c, 'h': self.h, 'w': self.w,
                'f': self.f, 'c_out': self.c_out, 'stride': self.stride, 'pad': self.pad, 'scale': self.scale}


def _conv(id, n, c_out, hw, f, c, stride, pad):
    return Fixture(id, 'conv', n=n, c=c, h=hw, w=hw, f=f, c_out=c_out, stride=stride, pad=pad)


def _pool(id, n, hw, win, c, stride):
    return Fixture(id, 'pool', n=n, c=c, h=hw, w=hw, f=win, stride=stride)


def _softmax(id, n, categories):
    return Fixture(id, 'softmax', n=n, c=categories)


FIXTURES = {fx.id: fx for fx in [
    # id, N, C_o, H/W, F, C_i, S, pad
    _conv('CV1', 128, 16, 28, 5, 1, 1, 0),
    _conv('CV2', 128, 16, 14, 5, 16, 1, 0),
    _conv('CV3', 128, 64, 24, 5, 3, 1, 2),
    _conv('CV4', 128, 64, 12, 5, 64, 1, 2),
    _conv('CV5', 64, 96, 224, 3, 3, 2, 0),
    _conv('CV6', 64, 256, 55, 5, 96, 2, 0),
    _conv('CV7', 64, 384, 13, 3, 256, 1, 1),
    _conv('CV8', 64, 384, 13, 3, 384, 1, 1),
    _conv('CV9', 32, 64, 224, 3, 3, 1, 1),
    _conv('CV10', 32, 256, 56, 3, 128, 1, 1),
    _conv('CV11', 32, 512, 28, 3, 256, 1, 1),
    _conv('CV12', 32, 512, 14, 3, 512, 1, 1),
    # id, N, H/W, window, C, S
    _pool('PL1', 128, 28, 2, 16, 2),
    _pool('PL2', 128, 14, 2, 16, 2),
    _pool('PL3', 128, 24, 3, 64, 2),
    _pool('PL4', 128, 12, 3, 64, 2),
    _pool('PL5', 128, 55, 3, 96, 2),
    _pool('PL6', 128, 27, 3, 192, 2),
    _pool('PL7', 128, 13, 3, 256, 2),
    _pool('PL8', 64, 110, 3, 96, 2),
    _pool('PL9', 64, 26, 3, 256, 2),
    _pool('PL10', 64, 13, 3, 256, 2),
    # id, N, categories
    _softmax('CLASS1', 128, 10),
    _softmax('CLASS2', 128, 10),
    _softmax('CLASS3', 128, 1000),
    _softmax('CLASS4', 64, 1000),
    _softmax('CLASS5', 32, 1000),
]}


def get_fixture(fixture_id, scale=1, hw_cap=DEFAULT_HW_CAP):
    try:
        fx = FIXTURES[fixture_id.strip().upper()]
    except KeyError:
        raise ValueError(f"Unknown fixture '{fixture_id}'. Run 'fixtures --list' for the available ids")
    return fx.scaled(scale, hw_cap)


def fixtures_of_kind(kind, scale=1, hw_cap=DEFAULT_HW_CAP):
    return [fx.scaled(scale, hw_cap) for fx in FIXTURES.values() if fx.kind == kind]


def list_fixtures(scale=1, hw_cap=DEFAULT_HW_CAP):
    df = pd.DataFrame([fx.scaled(scale, hw_cap).as_row() for fx in FIXTURES.values()])
    return df.astype({'f': 'Int64', 'c_out': 'Int64'})
