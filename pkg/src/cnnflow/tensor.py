"""Dense float32 feature maps in channel-major / row-major layout."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ShapeError

DTYPE = np.float32
ITEMSIZE = np.dtype(DTYPE).itemsize


@dataclass(frozen=True)
class Shape3:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("channels", "height", "width"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ShapeError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.size > sys.maxsize // ITEMSIZE:
            raise ShapeError(f"{self} is not addressable")

    @property
    def size(self) -> int:
        return self.channels * self.height * self.width

    @property
    def nbytes(self) -> int:
        return self.size * ITEMSIZE

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def __str__(self):
        return f"({self.channels},{self.height},{self.width})"


def index(shape: Shape3, c: int, y: int, x: int) -> int:
    """Flat offset of ``(c, y, x)``: ``c*H*W + y*W + x``."""
    if not (0 <= c < shape.channels and 0 <= y < shape.height and 0 <= x < shape.width):
        raise BoundsError(f"coordinate ({c},{y},{x}) outside {shape}")
    return (c * shape.height + y) * shape.width + x


class Tensor:
    """Immutable (C, H, W) float32 feature map.

    ``data`` is a read-only 3-D view; ``flat`` exposes the same buffer in
    layout order.
    """

    __slots__ = ("shape", "data")

    def __init__(self, data, shape: Shape3 | None = None):
        arr = np.array(data, dtype=DTYPE, order="C", copy=True)
        if shape is None:
            if arr.ndim != 3:
                raise ShapeError(f"expected a 3-D array, got ndim={arr.ndim}")
            shape = Shape3(*arr.shape)
        elif arr.size != shape.size:
            raise ShapeError(f"data length {arr.size} does not match {shape} ({shape.size})")
        arr = arr.reshape(shape.as_tuple())
        arr.flags.writeable = False
        self.shape = shape
        self.data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Adopt a freshly computed float32 C-contiguous array without copying.

        The caller gives up ownership of ``arr``.
        """
        if arr.dtype != DTYPE or arr.ndim != 3 or not arr.flags.c_contiguous:
            return cls(arr)
        t = object.__new__(cls)
        arr.flags.writeable = False
        t.shape = Shape3(*arr.shape)
        t.data = arr
        return t

    @classmethod
    def zeros(cls, shape: Shape3) -> "Tensor":
        return cls.wrap(np.zeros(shape.as_tuple(), dtype=DTYPE))

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def nbytes(self) -> int:
        return self.shape.nbytes

    def __getitem__(self, key):
        c, y, x = key
        return self.data.reshape(-1)[index(self.shape, c, y, x)]

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bit_equal(self.data, other.data)

    __hash__ = None

    def __repr__(self):
        return f"Tensor{self.shape}"


def bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """Byte-level equality (distinguishes -0.0 from 0.0, compares NaN payloads)."""
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


def flat_index(c: int, ky: int, kx: int, k: int) -> int:
    """Position of weight tap ``(c, ky, kx)`` inside a flattened K x K window."""
    return (c * k + ky) * k + kx


def flatten_weights(w4d, k: int, in_channels: int) -> np.ndarray:
    """Rearrange (out, in, K, K) weights into (out, in*K*K) rows.

    Pure permutation: ``out[f, c*K*K + ky*K + kx] = w4d[f, c, ky, kx]``.
    Accepts a 4-D array or a flat buffer in the same natural order.
    """
    w = np.asarray(w4d)
    per_out = in_channels * k * k
    if k < 1 or in_channels < 1 or w.size == 0 or w.size % per_out:
        raise ShapeError(
            f"weight length {w.size} not divisible by in_channels*K*K = {per_out}")
    out_channels = w.size // per_out
    if w.ndim == 4 and w.shape != (out_channels, in_channels, k, k):
        raise ShapeError(f"weight shape {w.shape} inconsistent with C={in_channels}, K={k}")
    src = w.reshape(-1)
    c, ky, kx = np.meshgrid(np.arange(in_channels), np.arange(k), np.arange(k), indexing="ij")
    # natural offset of every tap, listed in flattened-index order
    natural = ((c * k + ky) * k + kx).reshape(-1)
    xi = flat_index(c, ky, kx, k).reshape(-1)
    order = np.empty(per_out, dtype=np.int64)
    order[xi] = natural
    gather = (np.arange(out_channels)[:, None] * per_out + order[None, :])
    return src[gather].reshape(out_channels, per_out)


def unflatten_weights(w_flat, k: int, in_channels: int) -> np.ndarray:
    """Inverse of :func:`flatten_weights`."""
    w = np.asarray(w_flat)
    per_out = in_channels * k * k
    if w.size == 0 or w.size % per_out:
        raise ShapeError(f"flat weight length {w.size} not divisible by {per_out}")
    rows = w.reshape(-1, per_out)
    out = np.empty((rows.shape[0], in_channels, k, k), dtype=w.dtype)
    for c in range(in_channels):
        for ky in range(k):
            for kx in range(k):
                out[:, c, ky, kx] = rows[:, flat_index(c, ky, kx, k)]
    return out


@dataclass(eq=False)
class ConvWeights:
    w4d: np.ndarray
    bias: np.ndarray
    w_flat: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        w = np.asarray(self.w4d, dtype=DTYPE)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weights must be (out, in, K, K), got {w.shape}")
        self.w4d = np.ascontiguousarray(w)
        self.bias = np.ascontiguousarray(self.bias, dtype=DTYPE).reshape(-1)
        if self.bias.size != self.out_channels:
            raise ShapeError(f"bias length {self.bias.size} != out_channels {self.out_channels}")
        if self.w_flat is None:
            self.w_flat = flatten_weights(self.w4d, self.kernel, self.in_channels)
        else:
            self.w_flat = np.ascontiguousarray(self.w_flat, dtype=DTYPE).reshape(
                self.out_channels, -1)
            if self.w_flat.size != self.w4d.size:
                raise ShapeError("w_flat length differs from w4d length")
        for a in (self.w4d, self.w_flat, self.bias):
            a.flags.writeable = False

    @property
    def out_channels(self) -> int:
        return self.w4d.shape[0]

    @property
    def in_channels(self) -> int:
        return self.w4d.shape[1]

    @property
    def kernel(self) -> int:
        return self.w4d.shape[2]

    @property
    def nbytes(self) -> int:
        return (self.w4d.size + self.bias.size) * ITEMSIZE

    def __eq__(self, other):
        if not isinstance(other, ConvWeights):
            return NotImplemented
        return bit_equal(self.w4d, other.w4d) and bit_equal(self.bias, other.bias)
