"""Four-stage streaming runtime.

A network is cut into segments (:func:`plan_segments`). Each segment runs on
four worker threads connected by bounded FIFO channels::

    DataIn --> Compute --> Aux --> DataOut

DataIn fetches the segment's input tensor(s) from global memory row by row
and, for convolutions, gathers flattened receptive fields for a band of
``tile_rows`` output rows. Compute runs the head layer (flattened conv / FC
dot products, with optional fused ReLU). Aux streams row bands through
pooling and LRN. DataOut writes the result back to global memory. Only
segment inputs, weights and segment outputs touch the
:class:`MemTrafficLedger` global counters; everything else moves through
channels.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import PipelineError, ShapeError
from .model.graph import Kind, LayerDescriptor, NetworkGraph
from .tensor import DTYPE, ITEMSIZE, Shape3, Tensor

_POLL = 0.05


@dataclass(frozen=True)
class ChannelConfig:
    """``tile_rows=None`` streams whole feature maps as single tiles."""

    depth: int = 4
    tile_rows: int | None = 8

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"channel depth must be >= 1, got {self.depth}")
        if self.tile_rows is not None and self.tile_rows < 1:
            raise ValueError(f"tile_rows must be >= 1, got {self.tile_rows}")

    def rows(self, height):
        return height if self.tile_rows is None else min(self.tile_rows, height)


class MemTrafficLedger:
    """Byte counters for global-memory and channel traffic (thread-safe)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_read_global = 0
        self.bytes_written_global = 0
        self.bytes_moved_channels = 0

    def read(self, n):
        with self._lock:
            self.bytes_read_global += int(n)

    def write(self, n):
        with self._lock:
            self.bytes_written_global += int(n)

    def moved(self, n):
        with self._lock:
            self.bytes_moved_channels += int(n)

    @property
    def global_total(self):
        return self.bytes_read_global + self.bytes_written_global

    def as_dict(self):
        return {"bytes_read_global": self.bytes_read_global,
                "bytes_written_global": self.bytes_written_global,
                "bytes_moved_channels": self.bytes_moved_channels}

    def __repr__(self):
        return ("MemTrafficLedger(read={bytes_read_global}, written={bytes_written_global}, "
                "channels={bytes_moved_channels})".format(**self.as_dict()))


# -- planning ------------------------------------------------------------------

@dataclass(frozen=True)
class StagePlan:
    """One fused segment and the stage each of its layers runs on.

    ``inputs`` names the global tensors DataIn fetches (one per operand of
    the head layer); ``output`` names the tensor DataOut writes.
    """

    head: LayerDescriptor
    conv_relu: LayerDescriptor | None
    aux: tuple
    inputs: tuple
    in_shapes: tuple
    out_shape: Shape3
    weight_bytes: int = 0
    shapes: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def layers(self):
        seq = [self.head]
        if self.conv_relu is not None:
            seq.append(self.conv_relu)
        return tuple(seq) + self.aux

    @property
    def output(self):
        return self.layers[-1].name

    @property
    def stages(self):
        """Layer names per stage, in stage order."""
        st = {"data_in": [], "compute": [], "aux": [], "data_out": []}
        if self.head.kind is Kind.INPUT:
            st["data_in"].append(self.head.name)
        elif self.head.kind is Kind.MAXPOOL:
            st["aux"].append(self.head.name)
        else:
            st["compute"].append(self.head.name)
        if self.conv_relu is not None:
            st["compute"].append(self.conv_relu.name)
        st["aux"] += [l.name for l in self.aux]
        return st

    @property
    def read_bytes(self):
        return sum(s.nbytes for s in self.in_shapes) + self.weight_bytes

    @property
    def write_bytes(self):
        return self.out_shape.nbytes

    def ndrange(self, cfg: ChannelConfig):
        """3-D (c, y-band, x) iteration spaces of the two transfer stages.

        DataIn bands follow the head's output rows for convolutions and the
        input rows otherwise; vector heads move one tile.
        """
        src, out = self.in_shapes[0], self.out_shape
        if self.head.kind is Kind.CONV:
            rows = self.shapes[self.head.name].height
        elif self.head.kind in (Kind.FC, Kind.SOFTMAX):
            rows = None
        else:
            rows = src.height
        bands = 1 if rows is None else -(-rows // cfg.rows(rows))
        return {"data_in": (src.channels, bands, src.width),
                "data_out": (out.channels, out.height, out.width)}


def weight_bytes(graph: NetworkGraph, layer: LayerDescriptor) -> int:
    if layer.kind is Kind.CONV:
        k = layer.params.kernel
        return (layer.out * graph.in_channels(layer.name) * k * k + layer.out) * ITEMSIZE
    if layer.kind is Kind.FC:
        return (layer.out * graph.in_channels(layer.name) + layer.out) * ITEMSIZE
    return 0


def _make_plan(graph, head, relu, aux):
    names = [head.name] + ([relu.name] if relu else []) + [l.name for l in aux]
    if head.kind is Kind.INPUT:
        inputs, in_shapes = (head.name,), (graph.input_shape,)
    else:
        inputs, in_shapes = head.inputs, tuple(graph.in_shapes(head.name))
    return StagePlan(head, relu, tuple(aux), tuple(inputs), in_shapes,
                     graph.shapes[names[-1]], weight_bytes(graph, head),
                     {n: graph.shapes[n] for n in names})


def plan_segments(graph: NetworkGraph, fuse: bool = True) -> list[StagePlan]:
    """Cut ``graph`` into pipeline segments, in topological order.

    With ``fuse`` each segment is a maximal linear run
    ``Conv|FC [-> ReLU] [-> LRN] [-> MaxPool]`` (LRN and pool in either
    order, each at most once). A follower joins only if it is the sole
    consumer of its predecessor and has no other input, so branch points and
    joins always materialise in global memory. Every other layer is a
    segment on its own; without ``fuse`` every layer is.
    """
    ordered = graph.ordered()
    if len(ordered) == 1:
        return [_make_plan(graph, ordered[0], None, [])]

    def sole_follower(name):
        nxt = graph.consumers[name]
        if len(nxt) != 1:
            return None
        layer = graph[nxt[0]]
        return layer if layer.inputs == (name,) else None

    plans = []
    taken = set()
    for layer in ordered:
        if layer.kind is Kind.INPUT or layer.name in taken:
            continue
        relu, aux = None, []
        if fuse and layer.kind in (Kind.CONV, Kind.FC):
            cur = sole_follower(layer.name)
            if cur is not None and cur.kind is Kind.RELU:
                relu = cur
                cur = sole_follower(cur.name)
            seen = set()
            while cur is not None and cur.kind in (Kind.LRN, Kind.MAXPOOL) and cur.kind not in seen:
                seen.add(cur.kind)
                aux.append(cur)
                cur = sole_follower(cur.name)
        plan = _make_plan(graph, layer, relu, aux)
        taken.update(l.name for l in plan.layers)
        plans.append(plan)
    return plans


# -- channels and workers ---------------------------------------------------------

class _Aborted(Exception):
    pass


class Channel:
    """Bounded blocking FIFO that counts the bytes it carries."""

    def __init__(self, name, depth, ledger, abort):
        self.name = name
        self._q = queue.Queue(maxsize=depth)
        self._ledger = ledger
        self._abort = abort
        self.bytes_in = 0
        self.bytes_out = 0

    def put(self, item):
        n = _payload_bytes(item)
        while True:
            if self._abort.is_set():
                raise _Aborted
            try:
                self._q.put(item, timeout=_POLL)
                break
            except queue.Full:
                continue
        self.bytes_in += n
        self._ledger.moved(n)

    def get(self):
        while True:
            if self._abort.is_set():
                raise _Aborted
            try:
                item = self._q.get(timeout=_POLL)
                break
            except queue.Empty:
                continue
        self.bytes_out += _payload_bytes(item)
        return item


_EOS = None


def _payload_bytes(item):
    if item is _EOS:
        return 0
    _, payload = item
    if isinstance(payload, np.ndarray):
        return payload.nbytes
    return sum(a.nbytes for a in payload)


class _RowFetcher:
    """Line buffer over one global tensor; every row is fetched exactly once."""

    def __init__(self, t: Tensor, ledger):
        self.t = t
        self.ledger = ledger
        self.row_bytes = t.shape.channels * t.shape.width * ITEMSIZE
        self.fetched = 0
        self.lo = 0
        self.buf = np.empty((t.shape.channels, 0, t.shape.width), dtype=DTYPE)

    def ensure(self, upto):
        """Fetch rows so that rows ``< upto`` are available."""
        upto = min(upto, self.t.shape.height)
        if upto > self.fetched:
            rows = self.t.data[:, self.fetched:upto]
            self.ledger.read(self.row_bytes * (upto - self.fetched))
            self.buf = np.concatenate([self.buf, rows], axis=1)
            self.fetched = upto

    def release(self, below):
        """Drop buffered rows below ``below``."""
        below = min(max(below, self.lo), self.fetched)
        if below > self.lo:
            self.buf = self.buf[:, below - self.lo:]
            self.lo = below

    def rows(self, r0, r1):
        self.ensure(r1)
        return self.buf[:, r0 - self.lo:r1 - self.lo]

    def drain(self):
        self.ensure(self.t.shape.height)


def _data_in(plan, tensors, cfg, ledger, out):
    head = plan.head
    fetchers = [_RowFetcher(t, ledger) for t in tensors]
    if head.kind is Kind.CONV:
        f = fetchers[0]
        p = head.params
        h = f.t.shape.height
        ho = plan.shapes[head.name].height
        step = cfg.rows(ho)
        for oy0 in range(0, ho, step):
            oy1 = min(ho, oy0 + step)
            lo = max(0, oy0 * p.stride - p.pad)
            hi = min(h, (oy1 - 1) * p.stride - p.pad + p.kernel)
            f.release(lo)
            f.ensure(hi)
            out.put((oy0, L.gather_rows(f.buf, f.lo, h, p, oy0, oy1)))
    elif head.kind in (Kind.FC, Kind.SOFTMAX):
        f = fetchers[0]
        f.drain()
        vec = np.ascontiguousarray(f.buf).reshape(-1, 1)
        out.put((0, vec))
    else:
        h = fetchers[0].t.shape.height
        step = cfg.rows(h)
        for y0 in range(0, h, step):
            y1 = min(h, y0 + step)
            parts = [f.rows(y0, y1).copy() for f in fetchers]
            for f in fetchers:
                f.release(y1)
            out.put((y0, parts[0] if len(parts) == 1 else tuple(parts)))
    for f in fetchers:
        f.drain()
    out.put(_EOS)


def _compute(plan, weights, accum, ledger, inp, out):
    head = plan.head
    if head.kind in (Kind.CONV, Kind.FC):
        w = weights[head.name]
        ledger.read(w.nbytes)
        if head.kind is Kind.CONV:
            w_flat, bias = w.w_flat, w.bias
            wo = plan.shapes[head.name].width
        else:
            w_flat, bias = w.matrix, w.bias
    while (item := inp.get()) is not _EOS:
        row0, tile = item
        if head.kind is Kind.CONV:
            res = L.flat_dot(w_flat, tile, bias, accum)
            res = res.reshape(head.out, -1, wo)
        elif head.kind is Kind.FC:
            res = L.flat_dot(w_flat, tile, bias, accum).reshape(-1, 1, 1)
        elif head.kind is Kind.SOFTMAX:
            res = L.softmax(tile).reshape(-1, 1, 1)
        elif head.kind is Kind.ELTWISE_ADD:
            res = np.add(tile[0], tile[1])
        elif head.kind is Kind.CONCAT:
            res = np.concatenate(tile if isinstance(tile, tuple) else (tile,), axis=0)
        elif head.kind is Kind.RELU:
            res = np.maximum(tile, DTYPE(0))
        elif head.kind is Kind.LRN:
            res = L._lrn_array(tile, head.params)
        else:  # input passthrough, or maxpool handled by the aux stage
            res = tile
        if plan.conv_relu is not None:
            res = np.maximum(res, DTYPE(0))
        out.put((row0, res))
    out.put(_EOS)


class _StreamPool:
    """Row-streaming max pool producing output rows as soon as inputs arrive."""

    def __init__(self, params, in_shape):
        self.p = params
        self.h = in_shape.height
        self.ho, self.wo = params.output_hw(in_shape.height, in_shape.width)
        self.buf = None
        self.lo = 0   # global row index of buf[:, 0]
        self.next = 0

    def push(self, row0, band):
        if self.buf is None:
            self.buf = band
        else:
            self.buf = np.concatenate([self.buf, band], axis=1)
        have = self.lo + self.buf.shape[1]
        win, s, pad = self.p.window, self.p.stride, self.p.pad
        rows = []
        start = self.next
        while self.next < self.ho:
            r_lo = self.next * s - pad
            r_hi = min(self.h, r_lo + win)
            if r_hi > have:
                break
            top = max(0, -r_lo)
            a = max(0, r_lo) - self.lo
            slab = self.buf[:, a:r_hi - self.lo]
            rows.append(L._maxpool_array(slab, self.p, 1, self.wo, top))
            self.next += 1
        keep = max(0, self.next * s - pad)
        if keep > self.lo:
            self.buf = self.buf[:, keep - self.lo:]
            self.lo = keep
        if not rows:
            return []
        return [(start, np.concatenate(rows, axis=1))]


class _StreamMap:
    def __init__(self, fn):
        self.fn = fn

    def push(self, row0, band):
        return [(row0, self.fn(band))]


def _aux_op(layer, in_shape):
    if layer.kind is Kind.MAXPOOL:
        return _StreamPool(layer.params, in_shape)
    if layer.kind is Kind.LRN:
        params = layer.params
        return _StreamMap(lambda band: L._lrn_array(band, params))
    raise ShapeError(f"{layer.kind} cannot run in the aux stage")


def _aux(plan, inp, out):
    ops = []
    prev = plan.in_shapes[0] if plan.head.kind is Kind.MAXPOOL else plan.shapes[
        (plan.conv_relu or plan.head).name]
    aux_layers = ((plan.head,) if plan.head.kind is Kind.MAXPOOL else ()) + plan.aux
    for layer in aux_layers:
        ops.append(_aux_op(layer, prev))
        prev = plan.shapes[layer.name]
    while (item := inp.get()) is not _EOS:
        bands = [item]
        for op in ops:
            bands = [r for b in bands for r in op.push(*b)]
        for b in bands:
            out.put(b)
    out.put(_EOS)


def _data_out(plan, ledger, inp, result):
    c, h, w = plan.out_shape.as_tuple()
    arr = np.empty((c, h, w), dtype=DTYPE)
    filled = 0
    while (item := inp.get()) is not _EOS:
        row0, band = item
        if row0 != filled or band.shape[0] != c or band.shape[2] != w:
            raise ShapeError(f"DataOut got rows at {row0} with shape {band.shape}, "
                             f"expected row {filled} of ({c},{h},{w})")
        arr[:, row0:row0 + band.shape[1]] = band
        filled += band.shape[1]
        ledger.write(band.nbytes)
    if filled != h:
        raise ShapeError(f"DataOut received {filled} of {h} rows")
    result.append(Tensor.wrap(arr))


def run_segment(plan: StagePlan, input, weights, cfg: ChannelConfig | None = None,
                ledger: MemTrafficLedger | None = None, accum: str = "sequential",
                channels: list | None = None) -> Tensor:
    """Stream one segment through the four stage workers.

    ``input`` is a :class:`Tensor` or a sequence of them (one per entry of
    ``plan.inputs``). The channels used are appended to ``channels`` if
    given, for inspection.
    """
    cfg = cfg or ChannelConfig()
    ledger = ledger if ledger is not None else MemTrafficLedger()
    L._check_accum(accum)
    tensors = [input] if isinstance(input, Tensor) else list(input)
    if len(tensors) != len(plan.inputs):
        raise ShapeError(f"segment {plan.head.name!r} needs {len(plan.inputs)} input(s), "
                         f"got {len(tensors)}")
    for src, t, want in zip(plan.inputs, tensors, plan.in_shapes):
        if t.shape != want:
            raise ShapeError(f"edge {src} -> {plan.head.name}: expected {want}, got {t.shape}")

    abort = threading.Event()
    names = ("in->compute", "compute->aux", "aux->out")
    chans = [Channel(n, cfg.depth, ledger, abort) for n in names]
    if channels is not None:
        channels.extend(chans)
    result, errors = [], []

    def guard(fn, *args):
        def body():
            try:
                fn(*args)
            except _Aborted:
                pass
            except BaseException as e:  # surfaced to the caller below
                errors.append(e)
                abort.set()
        return body

    workers = [
        threading.Thread(target=guard(_data_in, plan, tensors, cfg, ledger, chans[0]),
                         name="DataIn", daemon=True),
        threading.Thread(target=guard(_compute, plan, weights, accum, ledger, chans[0], chans[1]),
                         name="Conv", daemon=True),
        threading.Thread(target=guard(_aux, plan, chans[1], chans[2]), name="Aux", daemon=True),
        threading.Thread(target=guard(_data_out, plan, ledger, chans[2], result),
                         name="DataOut", daemon=True),
    ]
    for t in workers:
        t.start()
    for t in workers:
        t.join()
    if errors:
        err = errors[0]
        if isinstance(err, ShapeError):
            raise err
        raise PipelineError(f"segment {plan.head.name!r} failed: {err!r}") from err
    return result[0]


def _check_input(graph, input):
    if input.shape != graph.input_shape:
        raise ShapeError(f"edge <input> -> {graph.input_name}: expected "
                         f"{graph.input_shape}, got {input.shape}")


def run_network(graph: NetworkGraph, input: Tensor, weights, cfg: ChannelConfig | None = None,
                accum: str = "sequential", fuse: bool = True, trace: dict | None = None):
    """Run every segment in topological order; returns ``(output, ledger)``.

    ``trace``, if given, receives every tensor materialised in global memory.
    """
    _check_input(graph, input)
    ledger = MemTrafficLedger()
    memory = {graph.input_name: input} if trace is None else trace
    memory[graph.input_name] = input
    plans = plan_segments(graph, fuse=fuse)
    for plan in plans:
        operands = [memory[name] for name in plan.inputs]
        memory[plan.output] = run_segment(plan, operands, weights, cfg, ledger, accum)
    return memory[plans[-1].output], ledger


def run_network_unfused(graph: NetworkGraph, input: Tensor, weights,
                        cfg: ChannelConfig | None = None, accum: str = "sequential"):
    """Baseline: every layer is its own segment and round-trips global memory."""
    return run_network(graph, input, weights, cfg, accum, fuse=False)


def run_reference(graph: NetworkGraph, input: Tensor, weights, trace: dict | None = None) -> Tensor:
    """Unpipelined layer-by-layer executor built on the direct kernels.

    ``trace``, if given, receives the output of every layer.
    """
    _check_input(graph, input)
    values = {} if trace is None else trace
    for layer in graph.ordered():
        args = [values[s] for s in layer.inputs]
        k = layer.kind
        if k is Kind.INPUT:
            out = input
        elif k is Kind.CONV:
            out = L.conv2d_direct(args[0], weights[layer.name], layer.params)
        elif k is Kind.FC:
            out = L.vector_tensor(L.fc(args[0], weights[layer.name]))
        elif k is Kind.MAXPOOL:
            out = L.maxpool(args[0], layer.params)
        elif k is Kind.LRN:
            out = L.lrn(args[0], layer.params)
        elif k is Kind.RELU:
            out = L.relu(args[0])
        elif k is Kind.SOFTMAX:
            out = L.vector_tensor(L.softmax(args[0]))
        elif k is Kind.ELTWISE_ADD:
            out = L.eltwise_add(*args)
        elif k is Kind.CONCAT:
            out = L.concat(args)
        else:
            raise ShapeError(f"unknown layer kind {k}")
        if out.shape != graph.shapes[layer.name]:
            raise ShapeError(f"layer {layer.name!r} produced {out.shape}, "
                             f"expected {graph.shapes[layer.name]}")
        values[layer.name] = out
    return values[graph.output_name]


def max_errors(out: Tensor, ref: Tensor) -> tuple[float, float]:
    """``(max |out - ref|, max |out - ref| / max |ref|)``."""
    if out.shape != ref.shape:
        raise ShapeError(f"cannot compare {out.shape} with {ref.shape}")
    diff = np.abs(out.data.astype(np.float64) - ref.data.astype(np.float64))
    worst = float(diff.max())
    scale = float(np.abs(ref.data).max())
    return worst, (worst / scale if scale else worst)
