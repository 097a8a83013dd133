"""Layer kernels.

Convolution comes in two forms that must agree: :func:`conv2d_direct` walks
the (input channel, kernel row, kernel column) triple loop over padded input
slices, while :func:`conv2d_flat` gathers each receptive field into a single
vector of length ``C*K*K`` and reduces it against the flattened filter rows.
With ``accum="sequential"`` both perform the same float32 multiplies and adds
in the same order and are therefore bit-identical. ``accum="tree"`` reduces
the products pairwise, the way a multiplier-adder tree would.

All kernels are pure and vectorise over output positions and output channels
only; the reduction order per output element never depends on array extents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import DTYPE, ITEMSIZE, ConvWeights, Shape3, Tensor, bit_equal

ACCUM_MODES = ("sequential", "tree")

# cap on the product block materialised by tree reduction
_TREE_BLOCK_ELEMS = 1 << 23


def _out_dim(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


@dataclass(frozen=True)
class ConvParams:
    kernel: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.pad < 0:
            raise ShapeError(f"invalid conv params {self}")

    def output_hw(self, height, width):
        ho = _out_dim(height, self.kernel, self.stride, self.pad)
        wo = _out_dim(width, self.kernel, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"conv K={self.kernel} s={self.stride} pad={self.pad} "
                f"leaves no output on {height}x{width} input")
        return ho, wo


@dataclass(frozen=True)
class PoolParams:
    """Max pooling over a square ``window``.

    ``pad`` pads with -inf (padding never wins the max); it must not exceed
    half the window so every window holds at least one real input.
    """

    window: int
    stride: int
    kind: str = "max"
    pad: int = 0

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ShapeError(f"invalid pool params {self}")
        if self.kind != "max":
            raise ShapeError(f"unsupported pooling kind {self.kind!r}")
        if not 0 <= self.pad <= self.window // 2:
            raise ShapeError(f"pool pad {self.pad} must be in [0, window//2]")

    def output_hw(self, height, width):
        ho = _out_dim(height, self.window, self.stride, self.pad)
        wo = _out_dim(width, self.window, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"pool window {self.window} has no valid position on {height}x{width} input")
        return ho, wo


@dataclass(frozen=True)
class LrnParams:
    """Cross-channel LRN: ``x / (k + alpha/n * sum_window x^2) ** beta``.

    The window spans ``n`` channels centred on the output channel, clipped at
    the channel boundaries.
    """

    n: int = 5
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ShapeError(f"LRN size must be a positive odd number, got {self.n}")
        if not (self.k > 0 and self.alpha >= 0 and self.beta > 0):
            raise ShapeError(f"invalid LRN params {self}")


class FcWeights:
    """Dense layer parameters; ``matrix`` is (out_features, in_features)."""

    def __init__(self, matrix, bias):
        m = np.ascontiguousarray(matrix, dtype=DTYPE)
        if m.ndim != 2:
            raise ShapeError(f"FC matrix must be 2-D, got shape {m.shape}")
        b = np.ascontiguousarray(bias, dtype=DTYPE).reshape(-1)
        if b.size != m.shape[0]:
            raise ShapeError(f"bias length {b.size} != out_features {m.shape[0]}")
        m.flags.writeable = False
        b.flags.writeable = False
        self.matrix = m
        self.bias = b

    @property
    def out_features(self):
        return self.matrix.shape[0]

    @property
    def in_features(self):
        return self.matrix.shape[1]

    @property
    def nbytes(self):
        return (self.matrix.size + self.bias.size) * ITEMSIZE

    def __eq__(self, other):
        if not isinstance(other, FcWeights):
            return NotImplemented
        return bit_equal(self.matrix, other.matrix) and bit_equal(self.bias, other.bias)

    __hash__ = None

    def __repr__(self):
        return f"FcWeights(out={self.out_features}, in={self.in_features})"


def _check_accum(accum):
    if accum not in ACCUM_MODES:
        raise ValueError(f"accum must be one of {ACCUM_MODES}, got {accum!r}")


# -- convolution -------------------------------------------------------------

def conv2d_direct(input: Tensor, weights: ConvWeights, params: ConvParams) -> Tensor:
    """Reference convolution: explicit (f_i, k_y, k_x) loop over padded slices."""
    c, h, w = input.shape.as_tuple()
    if c != weights.in_channels:
        raise ShapeError(f"input has {c} channels, weights expect {weights.in_channels}")
    if params.kernel != weights.kernel:
        raise ShapeError(f"params kernel {params.kernel} != weight kernel {weights.kernel}")
    k, s, p = params.kernel, params.stride, params.pad
    ho, wo = params.output_hw(h, w)

    xp = np.zeros((c, h + 2 * p, w + 2 * p), dtype=DTYPE)
    xp[:, p:p + h, p:p + w] = input.data
    acc = np.zeros((weights.out_channels, ho, wo), dtype=DTYPE)
    tmp = np.empty_like(acc)
    for fi in range(c):
        for ky in range(k):
            for kx in range(k):
                slab = xp[fi, ky:ky + s * (ho - 1) + 1:s, kx:kx + s * (wo - 1) + 1:s]
                np.multiply(weights.w4d[:, fi, ky, kx][:, None, None], slab[None], out=tmp)
                np.add(acc, tmp, out=acc)
    np.add(acc, weights.bias[:, None, None], out=acc)
    return Tensor.wrap(acc)


def gather_rows(src: np.ndarray, row0: int, height: int, params: ConvParams,
                oy0: int, oy1: int) -> np.ndarray:
    """Flattened receptive fields for output rows ``oy0 .. oy1-1``.

    ``src`` holds input rows ``row0 .. row0+R-1`` of a (C, height, W) map;
    rows outside ``[0, height)`` read as zero padding. Returns a
    (C*K*K, rows*W_out) matrix whose row ``x_i = c*K*K + ky*K + kx``
    matches :func:`cnnflow.tensor.flatten_weights`.
    """
    c, _, w = src.shape
    k, s, p = params.kernel, params.stride, params.pad
    wo = _out_dim(w, k, s, p)
    oy = np.arange(oy0, oy1)
    ox = np.arange(wo)
    kk = np.arange(k)
    iy = oy[None, :] * s + kk[:, None] - p          # (K, rows)
    ix = ox[None, :] * s + kk[:, None] - p          # (K, W_out)
    vy = (iy >= 0) & (iy < height)
    vx = (ix >= 0) & (ix < w)
    ly = np.where(vy, iy - row0, 0)
    lx = np.where(vx, ix, 0)
    if vy.any() and (ly[vy].min() < 0 or ly[vy].max() >= src.shape[1]):
        raise ShapeError(f"rows {oy0}..{oy1 - 1} need input rows not present in the buffer")
    # (C, ky, kx, rows, W_out)
    vals = src[:, ly[:, None, :, None], lx[None, :, None, :]]
    mask = vy[:, None, :, None] & vx[None, :, None, :]
    vals = np.where(mask[None], vals, DTYPE(0))
    return np.ascontiguousarray(vals.reshape(c * k * k, (oy1 - oy0) * wo), dtype=DTYPE)


def gather_window(input: Tensor, y: int, x: int, params: ConvParams) -> np.ndarray:
    """The ``C*K*K`` receptive field feeding output pixel ``(y, x)``."""
    c, h, w = input.shape.as_tuple()
    ho, wo = params.output_hw(h, w)
    if not (0 <= y < ho and 0 <= x < wo):
        raise ShapeError(f"({y},{x}) is not an output coordinate of a {ho}x{wo} map")
    cols = gather_rows(input.data, 0, h, params, y, y + 1)
    return cols[:, x].copy()


def flat_dot(w_flat: np.ndarray, windows: np.ndarray, bias: np.ndarray,
             accum: str = "sequential") -> np.ndarray:
    """``bias[f] + sum_i w_flat[f, i] * windows[i, p]`` for every (f, p)."""
    n_out, n_in = w_flat.shape
    if windows.shape[0] != n_in:
        raise ShapeError(f"window length {windows.shape[0]} != weight row length {n_in}")
    npix = windows.shape[1]
    if accum == "sequential":
        acc = np.zeros((n_out, npix), dtype=DTYPE)
        tmp = np.empty_like(acc)
        for i in range(n_in):
            np.multiply(w_flat[:, i, None], windows[i][None, :], out=tmp)
            np.add(acc, tmp, out=acc)
    elif accum == "tree":
        acc = np.empty((n_out, npix), dtype=DTYPE)
        step = max(1, _TREE_BLOCK_ELEMS // max(1, n_in * npix))
        for f0 in range(0, n_out, step):
            f1 = min(n_out, f0 + step)
            prod = w_flat[f0:f1, :, None] * windows[None, :, :]
            acc[f0:f1] = _tree_reduce(prod)
    else:
        _check_accum(accum)
    np.add(acc, bias[:, None], out=acc)
    return acc


def _tree_reduce(prod):
    # balanced pairwise sum over axis 1; an odd tail element is carried up
    while prod.shape[1] > 1:
        n = prod.shape[1]
        half = prod[:, 0:n - 1:2] + prod[:, 1:n:2]
        if n % 2:
            half = np.concatenate([half, prod[:, n - 1:]], axis=1)
        prod = half
    return prod[:, 0]


def conv2d_flat(input: Tensor, weights: ConvWeights, params: ConvParams,
                accum: str = "sequential") -> Tensor:
    """Convolution as one dot product per output pixel over flattened windows."""
    _check_accum(accum)
    c, h, w = input.shape.as_tuple()
    if c != weights.in_channels:
        raise ShapeError(f"input has {c} channels, weights expect {weights.in_channels}")
    if params.kernel != weights.kernel:
        raise ShapeError(f"params kernel {params.kernel} != weight kernel {weights.kernel}")
    ho, wo = params.output_hw(h, w)
    windows = gather_rows(input.data, 0, h, params, 0, ho)
    out = flat_dot(weights.w_flat, windows, weights.bias, accum)
    return Tensor.wrap(out.reshape(weights.out_channels, ho, wo))


# -- pooling / normalisation / activations ------------------------------------

def maxpool(input: Tensor, params: PoolParams) -> Tensor:
    c, h, w = input.shape.as_tuple()
    ho, wo = params.output_hw(h, w)
    return Tensor.wrap(_maxpool_array(input.data, params, ho, wo, top=params.pad))


def _maxpool_array(x, params, ho, wo, top):
    """Pool ``x`` (C, R, W) to ``ho`` output rows.

    ``top`` is the number of virtual -inf rows above ``x[:, 0]``; rows past the
    bottom are likewise padding.
    """
    win, s, p = params.window, params.stride, params.pad
    c, r, w = x.shape
    xp = np.full((c, top + r + win, w + 2 * p), -np.inf, dtype=DTYPE)
    xp[:, top:top + r, p:p + w] = x
    out = None
    for dy in range(win):
        for dx in range(win):
            slab = xp[:, dy:dy + s * (ho - 1) + 1:s, dx:dx + s * (wo - 1) + 1:s]
            out = slab.copy() if out is None else np.maximum(out, slab, out=out)
    return out


def lrn(input: Tensor, params: LrnParams) -> Tensor:
    return Tensor.wrap(_lrn_array(input.data, params))


def _lrn_array(x, params):
    c = x.shape[0]
    sq = x * x
    acc = np.zeros_like(x)
    half = params.n // 2
    for off in range(-half, half + 1):
        # acc[c] += sq[c + off], channels ascending for every element
        if off < 0:
            if -off < c:
                acc[-off:] += sq[:c + off]
        elif off < c:
            acc[:c - off] += sq[off:]
    scale = DTYPE(params.alpha / params.n)
    denom = np.power(DTYPE(params.k) + scale * acc, DTYPE(params.beta), dtype=DTYPE)
    return np.divide(x, denom, dtype=DTYPE)


def relu(input: Tensor) -> Tensor:
    return Tensor.wrap(np.maximum(input.data, DTYPE(0)))


def _as_vector(input):
    if isinstance(input, Tensor):
        return input.flat
    return np.ascontiguousarray(input, dtype=DTYPE).reshape(-1)


def fc(input, weights: FcWeights) -> np.ndarray:
    """Matrix-vector product with sequential accumulation over inputs.

    A :class:`Tensor` input is flattened in (c, y, x) layout order.
    """
    v = _as_vector(input)
    if v.size != weights.in_features:
        raise ShapeError(f"FC input length {v.size} != in_features {weights.in_features}")
    acc = np.zeros(weights.out_features, dtype=DTYPE)
    tmp = np.empty_like(acc)
    m = weights.matrix
    for i in range(v.size):
        np.multiply(m[:, i], v[i], out=tmp)
        np.add(acc, tmp, out=acc)
    np.add(acc, weights.bias, out=acc)
    return acc


def softmax(input) -> np.ndarray:
    v = _as_vector(input).astype(np.float64)
    e = np.exp(v - v.max())
    return (e / e.sum()).astype(DTYPE)


def eltwise_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"eltwise add of {a.shape} and {b.shape}")
    return Tensor.wrap(np.add(a.data, b.data))


def concat(inputs) -> Tensor:
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("concat needs at least one input")
    hw = {(t.shape.height, t.shape.width) for t in inputs}
    if len(hw) != 1:
        raise ShapeError(f"concat inputs disagree on spatial size: {sorted(hw)}")
    return Tensor.wrap(np.concatenate([t.data for t in inputs], axis=0))


def vector_tensor(v: np.ndarray) -> Tensor:
    """View a feature vector as a (n, 1, 1) map."""
    return Tensor.wrap(np.ascontiguousarray(v, dtype=DTYPE).reshape(-1, 1, 1))


def output_shape(kind, params, in_shapes, out_features=None):
    """Shape inference shared by graph validation and cost modelling."""
    first = in_shapes[0]
    if kind == "conv":
        ho, wo = params.output_hw(first.height, first.width)
        return Shape3(out_features, ho, wo)
    if kind == "maxpool":
        ho, wo = params.output_hw(first.height, first.width)
        return Shape3(first.channels, ho, wo)
    if kind in ("lrn", "relu", "input"):
        return first
    if kind == "fc":
        return Shape3(out_features, 1, 1)
    if kind == "softmax":
        return Shape3(first.size, 1, 1)
    if kind == "eltwise_add":
        if any(s != first for s in in_shapes):
            raise ShapeError(f"eltwise add operands differ: {', '.join(map(str, in_shapes))}")
        return first
    if kind == "concat":
        if any((s.height, s.width) != (first.height, first.width) for s in in_shapes):
            raise ShapeError(f"concat operands differ spatially: {', '.join(map(str, in_shapes))}")
        return Shape3(sum(s.channels for s in in_shapes), first.height, first.width)
    raise ShapeError(f"unknown layer kind {kind!r}")
