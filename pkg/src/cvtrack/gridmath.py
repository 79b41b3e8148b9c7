"""Dense-array kernels: matrix product, tempered softmax, axis max-pooling and
bilinear sampling, plus the FeatureGrid container the rest of the package uses.

Everything runs in float64; file I/O narrows to float32.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError


@dataclass
class FeatureGrid:
    """H x W x C grid of reals, channel-last, with its stride in input pixels."""

    data: np.ndarray
    stride: int = 4

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ShapeError(f"feature grid must be 3-D, got shape {data.shape}")
        if int(self.stride) < 1:
            raise InputError(f"stride must be >= 1, got {self.stride}")
        if not np.all(np.isfinite(data)):
            raise InputError("feature grid contains non-finite values")
        self.data = data
        self.stride = int(self.stride)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def channel(self, c):
        return self.data[:, :, c]

    def copy(self):
        return FeatureGrid(self.data.copy(), self.stride)


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_t(v, temperature=5.0, axis=-1):
    """exp(T*v_i) / sum_j exp(T*v_j), stabilised by subtracting the max.

    Works along ``axis`` so callers can normalise many vectors at once.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    if not temperature > 0:
        raise InputError(f"temperature must be positive, got {temperature}")
    z = temperature * v
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def axis_maxpool(m, axis):
    """Max over a full column ("cols": H x 1 kernel, length-W result) or a full
    row ("rows": 1 x W kernel, length-H result)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or 0 in m.shape:
        raise ShapeError(f"axis_maxpool expects a non-empty matrix, got {m.shape}")
    if axis == "cols":
        return m.max(axis=0)
    if axis == "rows":
        return m.max(axis=1)
    raise InputError(f"axis must be 'rows' or 'cols', got {axis!r}")


def bilinear_sample(channel, x, y):
    """Sample a 2-D map at column ``x``, row ``y``; neighbours outside the map read 0."""
    if not (np.isfinite(x) and np.isfinite(y)):
        raise InputError(f"non-finite sample coordinate ({x}, {y})")
    channel = np.asarray(channel, dtype=np.float64)
    h, w = channel.shape
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0

    def at(r, c):
        if 0 <= r < h and 0 <= c < w:
            return channel[r, c]
        return 0.0

    return ((1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
            + fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1)))


def bilinear_sample_grid(data, ys, xs):
    """Vectorised bilinear gather from an H x W x C array.

    ``ys``/``xs`` are equally shaped coordinate arrays; the result has shape
    ``ys.shape + (C,)``. Zero padding outside the map, as in bilinear_sample.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    if ys.shape != xs.shape:
        raise ShapeError(f"coordinate arrays differ: {ys.shape} vs {xs.shape}")
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(xs))):
        raise InputError("non-finite sample coordinates")
    h, w, c = data.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    out = np.zeros(ys.shape + (c,))
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            r = y0 + dy
            cc = x0 + dx
            inside = (r >= 0) & (r < h) & (cc >= 0) & (cc < w)
            vals = data[np.clip(r, 0, h - 1), np.clip(cc, 0, w - 1)]
            out += wy * wx * np.where(inside[..., None], vals, 0.0)
    return out
