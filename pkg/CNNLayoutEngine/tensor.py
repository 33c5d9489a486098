import logging
from enum import IntEnum

import numpy as np

import CNNLayoutEngine.utils.formatting as form

logger = logging.getLogger('CLE.Tensor')

MAGIC = b'T4D1'
HEADER_DTYPE = np.dtype([('magic', 'S4'), ('dims', '<u4', (4,)), ('layout', 'u1'), ('reserved', 'u1', (3,))])
PAYLOAD_DTYPE = np.dtype('<f4')

MAX_DIM = np.iinfo(np.uint32).max
MAX_ELEMENTS = np.iinfo(np.int64).max // PAYLOAD_DTYPE.itemsize


class ShapeError(ValueError):
    pass


class LayoutError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


class Layout(IntEnum):
    """
    Physical dimension order of a 4D tensor. The last listed dimension is contiguous in memory.
    The integer values are the layout codes of the binary tensor format.
    """
    NCHW = 0
    CHWN = 1
    NHWC = 2
    HWCN = 3

    @property
    def axes(self):
        # logical axes (0=n, 1=c, 2=h, 3=w) in physical order, slowest first
        return _LAYOUT_AXES[self]

    @classmethod
    def from_string(cls, name):
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise LayoutError(f"Unknown layout '{name}'. Supported: {', '.join(la.name for la in cls)}")


_LAYOUT_AXES = {
    Layout.NCHW: (0, 1, 2, 3),
    Layout.CHWN: (1, 2, 3, 0),
    Layout.NHWC: (0, 2, 3, 1),
    Layout.HWCN: (2, 3, 1, 0),
}


def layout_strides(dims, layout):
    """Element strides for the logical (n, c, h, w) indices of a tensor with `dims` stored in `layout`."""
    strides = [0, 0, 0, 0]
    step = 1
    for axis in reversed(layout.axes):
        strides[axis] = step
        step *= int(dims[axis])
    return tuple(strides)


def check_dims(dims):
    if len(dims) != 4:
        raise ShapeError(f'Expected four dimensions but got {len(dims)}')
    size = 1
    for d in dims:
        if int(d) < 1:
            raise ShapeError(f'All dimensions have to be at least 1, got {tuple(dims)}')
        if int(d) > MAX_DIM:
            raise ShapeError(f'Dimension {d} exceeds the 32-bit range')
        size *= int(d)
    if size > MAX_ELEMENTS:
        raise ShapeError(f'Tensor of dims {tuple(dims)} overflows the element count')
    return size


class Tensor4D:
    """
    Dense single-precision 4D array tagged with a data layout.

    `data` is the flat payload in the layout's memory order. The payload is read-only; every operation returns a
    new tensor.
    """

    dims: tuple  # (n, c, h, w)
    layout: Layout
    data: np.ndarray  # flat float32, length n*c*h*w

    def __init__(self, dims, layout, data):
        size = check_dims(dims)
        self.dims = tuple(int(d) for d in dims)
        self.layout = Layout(layout)
        data = np.ascontiguousarray(data, dtype=np.float32).reshape(-1)
        if data.size != size:
            raise ShapeError(f'Payload holds {data.size} elements but dims {self.dims} need {size}')
        if data.flags.writeable:
            data = data.copy()
            data.flags.writeable = False
        self.data = data

    @classmethod
    def _wrap(cls, dims, layout, data):
        # takes ownership of a freshly allocated payload without copying
        data.flags.writeable = False
        return cls(dims, layout, data)

    @classmethod
    def from_logical(cls, array, layout=Layout.NCHW):
        array = np.asarray(array, dtype=np.float32)
        if array.ndim != 4:
            raise ShapeError(f'Expected a 4D (N, C, H, W) array but got {array.ndim} dimensions')
        layout = Layout(layout)
        physical = np.ascontiguousarray(np.transpose(array, layout.axes))
        return cls(array.shape, layout, physical.reshape(-1))

    @classmethod
    def zeros(cls, dims, layout=Layout.NCHW):
        return cls(dims, layout, np.zeros(check_dims(dims), dtype=np.float32))

    @classmethod
    def random(cls, dims, layout=Layout.NCHW, seed=42, low=-1.0, high=1.0):
        rng = np.random.default_rng(seed)
        return cls(dims, layout, rng.uniform(low, high, size=check_dims(dims)).astype(np.float32))

    @property
    def n(self):
        return self.dims[0]

    @property
    def c(self):
        return self.dims[1]

    @property
    def h(self):
        return self.dims[2]

    @property
    def w(self):
        return self.dims[3]

    @property
    def size(self):
        return self.data.size

    @property
    def nbytes(self):
        return self.data.nbytes

    @property
    def strides(self):
        return layout_strides(self.dims, self.layout)

    @property
    def physical_shape(self):
        return tuple(self.dims[axis] for axis in self.layout.axes)

    def physical(self):
        return self.data.reshape(self.physical_shape)

    def logical(self):
        """(N, C, H, W) view of the payload; strided unless the layout is NCHW."""
        return np.transpose(self.physical(), np.argsort(self.layout.axes))

    def at(self, n, c, h, w):
        """
        Element at the logical indices (n, c, h, w), whatever the layout. The strides of the layout map them to the
        physical offset, so a CHWN tensor is not indexed in its storage order.
        """
        index = (n, c, h, w)
        for i, d in zip(index, self.dims):
            if not 0 <= i < d:
                raise IndexError(f'Index {index} out of range for dims {self.dims}')
        offset = sum(i * s for i, s in zip(index, self.strides))
        return float(self.data[offset])

    def __repr__(self):
        return f'Tensor4D({form.dims_to_string(self.dims)}, {self.layout.name})'


class FilterBank:
    """Convolution weights stored in (c_o, c_i, f_h, f_w) order for every tensor layout."""

    dims: tuple  # (c_o, c_i, f_h, f_w)
    data: np.ndarray

    def __init__(self, dims, data):
        size = check_dims(dims)
        self.dims = tuple(int(d) for d in dims)
        data = np.array(data, dtype=np.float32).reshape(-1)
        if data.size != size:
            raise ShapeError(f'Filter payload holds {data.size} elements but dims {self.dims} need {size}')
        data.flags.writeable = False
        self.data = data

    @classmethod
    def random(cls, dims, seed=42, bound=None):
        rng = np.random.default_rng(seed)
        if bound is None:
            bound = 1.0 / np.sqrt(dims[1] * dims[2] * dims[3])
        return cls(dims, rng.uniform(-bound, bound, size=check_dims(dims)).astype(np.float32))

    @property
    def c_o(self):
        return self.dims[0]

    @property
    def c_i(self):
        return self.dims[1]

    @property
    def f_h(self):
        return self.dims[2]

    @property
    def f_w(self):
        return self.dims[3]

    def array(self):
        return self.data.reshape(self.dims)

    def __repr__(self):
        return f'FilterBank({form.dims_to_string(self.dims)})'


def approx_equal(a, b, rel_tol):
    """Logical element-wise comparison: |x - y| <= rel_tol * max(|x|, |y|, 1) for every pair."""
    if a.dims != b.dims:
        raise ShapeError(f'Cannot compare tensors of dims {a.dims} and {b.dims}')
    x = a.logical().astype(np.float64)
    y = b.logical().astype(np.float64)
    bound = rel_tol * np.maximum(np.maximum(np.abs(x), np.abs(y)), 1.0)
    return bool(np.all(np.abs(x - y) <= bound))


def write_t4d(path, t):
    header = np.zeros(1, dtype=HEADER_DTYPE)
    header['magic'] = MAGIC
    header['dims'] = t.dims
    header['layout'] = int(t.layout)
    with open(path, 'wb') as f:
        f.write(header.tobytes())
        f.write(t.data.astype(PAYLOAD_DTYPE, copy=False).tobytes())
    logger.debug(form.get_log_step(f'wrote {t} to {path}', 1))


def read_t4d(path):
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < HEADER_DTYPE.itemsize:
        raise TensorFormatError(f'{path}: file too short for a tensor header')
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if header['magic'] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {header['magic']!r}")
    code = int(header['layout'])
    if code not in {la.value for la in Layout}:
        raise TensorFormatError(f'{path}: unknown layout code {code}')
    dims = tuple(int(d) for d in header['dims'])
    try:
        size = check_dims(dims)
    except ShapeError as e:
        raise TensorFormatError(f'{path}: {e}')
    payload = raw[HEADER_DTYPE.itemsize:]
    if len(payload) != size * PAYLOAD_DTYPE.itemsize:
        raise TensorFormatError(f'{path}: payload holds {len(payload)} bytes but dims {dims} need '
                                f'{size * PAYLOAD_DTYPE.itemsize}')
    data = np.frombuffer(payload, dtype=PAYLOAD_DTYPE).astype(np.float32)
    return Tensor4D(dims, Layout(code), data)
