"""Weight storage and the binary weight / tensor file formats.

Weight file (all integers little-endian)::

    b"FFCW"  u8 version=1  u32 record_count
    record:  u16 name_len  name(utf-8)  u8 kind (0=conv, 1=fc)
             conv: u32 out, u32 in, u32 K     fc: u32 out, u32 in
             float32 weights (row-major, conv in (out, in, ky, kx) order)
             float32 biases (out)

Tensor file: ``b"FFCT"  u8 version=1  u32 C, u32 H, u32 W`` then C*H*W
float32 values in (c, y, x) order.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping

import numpy as np

from ..errors import DimensionError, HeaderError, TruncatedError, WeightFileError
from ..layers import FcWeights
from ..tensor import DTYPE, ConvWeights, Shape3, Tensor
from .graph import Kind, NetworkGraph

WEIGHT_MAGIC = b"FFCW"
TENSOR_MAGIC = b"FFCT"
VERSION = 1
_LE_F32 = np.dtype("<f4")

KIND_CONV = 0
KIND_FC = 1


class WeightStore(Mapping):
    """Read-only mapping of layer name to :class:`ConvWeights` / :class:`FcWeights`."""

    def __init__(self, entries, graph: NetworkGraph | None = None):
        self._entries = dict(entries)
        if graph is not None:
            self.check(graph)

    def __getitem__(self, name):
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (list(self._entries) == list(other._entries)
                and all(self[n] == other[n] for n in self))

    __hash__ = None

    @property
    def nbytes(self):
        return sum(w.nbytes for w in self._entries.values())

    def check(self, graph: NetworkGraph):
        expected = {l.name for l in graph.weighted_layers()}
        for name in self._entries:
            if name not in expected:
                raise DimensionError("not a conv/fc layer of the graph", name)
        for layer in graph.weighted_layers():
            if layer.name not in self._entries:
                raise DimensionError("no weights", layer.name)
            got = self._entries[layer.name]
            want = expected_dims(graph, layer.name)
            have = _dims(got)
            if have != want:
                raise DimensionError(f"weights have dims {have}, graph needs {want}", layer.name)


def _dims(w):
    if isinstance(w, ConvWeights):
        return (KIND_CONV, w.out_channels, w.in_channels, w.kernel)
    return (KIND_FC, w.out_features, w.in_features)


def expected_dims(graph, name):
    layer = graph[name]
    cin = graph.in_channels(name)
    if layer.kind is Kind.CONV:
        return (KIND_CONV, layer.out, cin, layer.params.kernel)
    return (KIND_FC, layer.out, cin)


def random_weights(graph: NetworkGraph, seed: int) -> WeightStore:
    """Uniform[-0.5, 0.5) weights and biases, deterministic in (graph, seed)."""
    rng = np.random.default_rng(seed)
    entries = {}
    for layer in graph.weighted_layers():
        dims = expected_dims(graph, layer.name)
        if dims[0] == KIND_CONV:
            _, out, cin, k = dims
            w = rng.random((out, cin, k, k), dtype=DTYPE) - DTYPE(0.5)
            b = rng.random(out, dtype=DTYPE) - DTYPE(0.5)
            entries[layer.name] = ConvWeights(w, b)
        else:
            _, out, cin = dims
            w = rng.random((out, cin), dtype=DTYPE) - DTYPE(0.5)
            b = rng.random(out, dtype=DTYPE) - DTYPE(0.5)
            entries[layer.name] = FcWeights(w, b)
    return WeightStore(entries)


def dump_weights(store: WeightStore) -> bytes:
    parts = [WEIGHT_MAGIC, struct.pack("<BI", VERSION, len(store))]
    for name, w in store.items():
        raw = name.encode("utf-8")
        dims = _dims(w)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", dims[0]) + struct.pack(f"<{len(dims) - 1}I", *dims[1:]))
        if dims[0] == KIND_CONV:
            parts += [w.w4d.astype(_LE_F32).tobytes(), w.bias.astype(_LE_F32).tobytes()]
        else:
            parts += [w.matrix.astype(_LE_F32).tobytes(), w.bias.astype(_LE_F32).tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"file truncated reading {what}: need {n} bytes at offset {self.pos}, "
                f"{len(self.buf) - self.pos} left")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def floats(self, n, what):
        return np.frombuffer(self.take(4 * n, what), dtype=_LE_F32).astype(DTYPE)


def _check_header(buf, magic, kind):
    if len(buf) < len(magic) + 1:
        raise HeaderError(f"{kind} file too short for a header ({len(buf)} bytes)")
    if bytes(buf[:4]) != magic:
        raise HeaderError(f"bad magic {bytes(buf[:4])!r}, expected {magic!r}")
    if buf[4] != VERSION:
        raise HeaderError(f"unsupported {kind} file version {buf[4]}")


def load_weights(data: bytes, graph: NetworkGraph) -> WeightStore:
    _check_header(data, WEIGHT_MAGIC, "weight")
    r = _Reader(data)
    r.take(5, "header")
    (count,) = r.unpack("<I", "record count")
    entries = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        try:
            name = bytes(r.take(nlen, "layer name")).decode("utf-8")
        except UnicodeDecodeError:
            raise WeightFileError("layer name is not valid UTF-8") from None
        (kind,) = r.unpack("<B", f"kind of {name!r}")
        if kind == KIND_CONV:
            out, cin, k = r.unpack("<3I", f"dims of {name!r}")
            dims = (kind, out, cin, k)
        elif kind == KIND_FC:
            out, cin = r.unpack("<2I", f"dims of {name!r}")
            dims = (kind, out, cin)
        else:
            raise WeightFileError(f"record {name!r} has unknown kind {kind}")
        if name not in graph or graph[name].kind not in (Kind.CONV, Kind.FC):
            raise DimensionError("not a conv/fc layer of the graph", name)
        want = expected_dims(graph, name)
        if dims != want:
            raise DimensionError(f"file has dims {dims}, graph needs {want}", name)
        if name in entries:
            raise WeightFileError(f"duplicate record for {name!r}")
        n = out * cin * (k * k if kind == KIND_CONV else 1)
        w = r.floats(n, f"weights of {name!r}")
        b = r.floats(out, f"biases of {name!r}")
        if kind == KIND_CONV:
            entries[name] = ConvWeights(w.reshape(out, cin, k, k), b)
        else:
            entries[name] = FcWeights(w.reshape(out, cin), b)
    if r.pos != len(r.buf):
        raise WeightFileError(f"{len(r.buf) - r.pos} trailing bytes after last record")
    return WeightStore(entries, graph)


def save_weights(path, store: WeightStore):
    with open(path, "wb") as f:
        f.write(dump_weights(store))


def read_weights(path, graph: NetworkGraph) -> WeightStore:
    with open(path, "rb") as f:
        return load_weights(f.read(), graph)


def dump_tensor(t: Tensor) -> bytes:
    header = TENSOR_MAGIC + struct.pack("<B3I", VERSION, *t.shape.as_tuple())
    return header + t.data.astype(_LE_F32).tobytes()


def load_tensor(data: bytes) -> Tensor:
    _check_header(data, TENSOR_MAGIC, "tensor")
    r = _Reader(data)
    r.take(5, "header")
    c, h, w = r.unpack("<3I", "tensor shape")
    shape = Shape3(c, h, w)
    payload = r.floats(shape.size, "tensor payload")
    if r.pos != len(r.buf):
        raise WeightFileError(f"{len(r.buf) - r.pos} trailing bytes after tensor payload")
    return Tensor(payload, shape)


def save_tensor(path, t: Tensor):
    with open(path, "wb") as f:
        f.write(dump_tensor(t))


def read_tensor(path) -> Tensor:
    with open(path, "rb") as f:
        return load_tensor(f.read())
