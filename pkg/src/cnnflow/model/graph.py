from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from ..errors import GraphError, ShapeError, ValidationError
from ..layers import ConvParams, LrnParams, PoolParams, output_shape
from ..tensor import Shape3


class Kind(str, Enum):
    INPUT = "input"
    CONV = "conv"
    MAXPOOL = "maxpool"
    LRN = "lrn"
    RELU = "relu"
    FC = "fc"
    SOFTMAX = "softmax"
    ELTWISE_ADD = "eltwise_add"
    CONCAT = "concat"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        key = text.strip().lower().replace("-", "").replace("_", "")
        for k in cls:
            if k.value.replace("_", "") == key:
                return k
        aliases = {"pool": cls.MAXPOOL, "eltwise": cls.ELTWISE_ADD, "add": cls.ELTWISE_ADD,
                   "innerproduct": cls.FC, "dense": cls.FC, "convolution": cls.CONV}
        if key in aliases:
            return aliases[key]
        raise ValueError(f"unknown layer kind {text!r}")

    def __str__(self):
        return self.value


WEIGHTED = (Kind.CONV, Kind.FC)

_PARAM_TYPES = {Kind.CONV: ConvParams, Kind.MAXPOOL: PoolParams, Kind.LRN: LrnParams}


@dataclass(frozen=True)
class LayerDescriptor:
    name: str
    kind: Kind
    inputs: tuple = ()
    params: object = None
    out: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "inputs", tuple(self.inputs))


def _arity_ok(kind, n):
    if kind is Kind.INPUT:
        return n == 0
    if kind is Kind.ELTWISE_ADD:
        return n == 2
    if kind is Kind.CONCAT:
        return n >= 1
    return n == 1


@dataclass
class NetworkGraph:
    """Validated layer DAG.

    Construction checks names, arity, connectivity and acyclicity, then runs
    shape inference end to end; ``shapes`` maps every layer to its output
    shape.
    """

    layers: list
    input_shape: Shape3
    shapes: dict = field(init=False, repr=False)
    order: list = field(init=False, repr=False)

    def __post_init__(self):
        self.layers = list(self.layers)
        self._by_name = {}
        for layer in self.layers:
            if layer.name in self._by_name:
                raise ValidationError("duplicate layer name", layer.name)
            self._by_name[layer.name] = layer
        inputs = [l for l in self.layers if l.kind is Kind.INPUT]
        if len(inputs) != 1:
            raise ValidationError(f"expected exactly one input layer, found {len(inputs)}")
        self.input_name = inputs[0].name
        for layer in self.layers:
            if not _arity_ok(layer.kind, len(layer.inputs)):
                raise ValidationError(
                    f"{layer.kind} layer cannot take {len(layer.inputs)} input(s)", layer.name)
            for src in layer.inputs:
                if src not in self._by_name:
                    raise ValidationError(f"undefined input {src!r}", layer.name)
            want = _PARAM_TYPES.get(layer.kind)
            if want is not None and not isinstance(layer.params, want):
                raise ValidationError(f"{layer.kind} layer needs {want.__name__}", layer.name)
            if layer.kind in WEIGHTED and not (isinstance(layer.out, int) and layer.out >= 1):
                raise ValidationError("missing or invalid output size", layer.name)
        self.consumers = {l.name: [] for l in self.layers}
        for layer in self.layers:
            for src in layer.inputs:
                self.consumers[src].append(layer.name)
        self.order = self._topological_order()
        sinks = [n for n in self.order if not self.consumers[n]]
        if len(sinks) != 1:
            raise ValidationError(f"expected exactly one output layer, found {sinks}")
        self.output_name = sinks[0]
        self.shapes = self._infer_shapes()

    def _topological_order(self):
        # Kahn's algorithm; ties broken by declaration order
        pos = {l.name: i for i, l in enumerate(self.layers)}
        indeg = {l.name: len(l.inputs) for l in self.layers}
        ready = [pos[n] for n, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            name = self.layers[heapq.heappop(ready)].name
            order.append(name)
            for dst in self.consumers[name]:
                indeg[dst] -= 1
                if indeg[dst] == 0:
                    heapq.heappush(ready, pos[dst])
        if len(order) != len(self.layers):
            stuck = sorted(n for n, d in indeg.items() if d > 0)
            raise GraphError(f"graph has a cycle through {stuck}")
        # only the input layer has no predecessors, so acyclic implies reachable
        return order

    def _infer_shapes(self):
        shapes = {}
        for name in self.order:
            layer = self._by_name[name]
            if layer.kind is Kind.INPUT:
                shapes[name] = self.input_shape
                continue
            in_shapes = [shapes[s] for s in layer.inputs]
            try:
                shapes[name] = output_shape(layer.kind.value, layer.params, in_shapes, layer.out)
            except ShapeError as e:
                raise ValidationError(str(e), name) from None
        return shapes

    def __getitem__(self, name) -> LayerDescriptor:
        return self._by_name[name]

    def __contains__(self, name):
        return name in self._by_name

    def __len__(self):
        return len(self.layers)

    def ordered(self):
        """Layers in topological order."""
        return [self._by_name[n] for n in self.order]

    def in_shapes(self, name):
        return [self.shapes[s] for s in self._by_name[name].inputs]

    def in_channels(self, name):
        """Input width seen by a weighted layer (channels for conv, features for FC)."""
        layer = self._by_name[name]
        src = self.shapes[layer.inputs[0]]
        return src.channels if layer.kind is Kind.CONV else src.size

    @property
    def output_shape(self) -> Shape3:
        return self.shapes[self.output_name]

    def weighted_layers(self):
        return [l for l in self.ordered() if l.kind in WEIGHTED]

    def weighted_depth(self) -> int:
        """Largest number of conv/FC layers on any input-to-output path.

        Counts the main path only, so projection shortcuts in residual
        networks do not add to the depth.
        """
        depth = {}
        for layer in self.ordered():
            best = max((depth[s] for s in layer.inputs), default=0)
            depth[layer.name] = best + (layer.kind in WEIGHTED)
        return depth[self.output_name]
