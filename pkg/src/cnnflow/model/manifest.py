"""Plain-text network manifests.

A manifest is a ``[network]`` header followed by one ``[layer]`` block per
layer::

    [network]
    input = 3,224,224

    [layer]
    name = data
    kind = input

    [layer]
    name = conv1
    kind = conv
    inputs = data
    out = 96
    k = 11
    stride = 4

``inputs`` defaults to the previously declared layer. Blank lines and
``#`` comments are ignored.
"""

from __future__ import annotations

from ..errors import ManifestParseError, ShapeError, ValidationError
from ..layers import ConvParams, LrnParams, PoolParams
from ..tensor import Shape3
from .graph import Kind, LayerDescriptor, NetworkGraph

_KEYS = {
    Kind.INPUT: set(),
    Kind.CONV: {"out", "k", "stride", "pad"},
    Kind.MAXPOOL: {"window", "stride", "pad"},
    Kind.LRN: {"n", "alpha", "beta", "kfac"},
    Kind.RELU: set(),
    Kind.FC: {"out"},
    Kind.SOFTMAX: set(),
    Kind.ELTWISE_ADD: set(),
    Kind.CONCAT: set(),
}
_COMMON = {"name", "kind", "inputs"}
_INT_KEYS = {"out", "k", "stride", "pad", "window", "n"}


def _parse_blocks(text):
    blocks = []  # (section, header lineno, {key: (value, lineno)})
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ManifestParseError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in ("network", "layer"):
                raise ManifestParseError(f"unknown section [{section}]", lineno)
            current = (section, lineno, {})
            blocks.append(current)
            continue
        if "=" not in line:
            raise ManifestParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ManifestParseError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key in current[2]:
            raise ManifestParseError(f"duplicate key {key!r}", lineno)
        current[2][key] = (value, lineno)
    return blocks


def _number(entries, key, cast, default=None):
    if key not in entries:
        return default
    value, lineno = entries[key]
    try:
        return cast(value)
    except ValueError:
        raise ManifestParseError(f"{key} = {value!r} is not a valid {cast.__name__}", lineno) from None


def load_manifest(text: str) -> NetworkGraph:
    blocks = _parse_blocks(text)
    nets = [b for b in blocks if b[0] == "network"]
    if len(nets) != 1:
        line = nets[1][1] if len(nets) > 1 else None
        raise ManifestParseError(f"expected one [network] section, found {len(nets)}", line)
    net = nets[0][2]
    if "input" not in net:
        raise ManifestParseError("[network] lacks 'input = C,H,W'", nets[0][1])
    value, lineno = net["input"]
    try:
        dims = [int(v) for v in value.split(",")]
        if len(dims) != 3:
            raise ValueError
        input_shape = Shape3(*dims)
    except (ValueError, ShapeError):
        raise ManifestParseError(f"input = {value!r} is not a C,H,W triple", lineno) from None
    for key in net:
        if key != "input":
            raise ManifestParseError(f"unknown [network] key {key!r}", net[key][1])

    layers = []
    prev = None
    for section, header_line, entries in blocks:
        if section != "layer":
            continue
        if "name" not in entries:
            raise ManifestParseError("layer block has no name", header_line)
        name = entries["name"][0]
        if "kind" not in entries:
            raise ManifestParseError(f"layer {name!r} has no kind", header_line)
        kind_text, kind_line = entries["kind"]
        try:
            kind = Kind.parse(kind_text)
        except ValueError as e:
            raise ManifestParseError(str(e), kind_line) from None
        for key, (_, line) in entries.items():
            if key not in _COMMON and key not in _KEYS[kind]:
                raise ManifestParseError(f"key {key!r} not valid for {kind} layer", line)
            if key in _INT_KEYS:
                _number(entries, key, int)
        if "inputs" in entries:
            inputs = [s.strip() for s in entries["inputs"][0].split(",") if s.strip()]
        elif kind is Kind.INPUT or prev is None:
            inputs = []
        else:
            inputs = [prev]
        layers.append(_descriptor(name, kind, inputs, entries))
        prev = name
    return NetworkGraph(layers, input_shape)


def _descriptor(name, kind, inputs, e):
    num = lambda key, cast=int, default=None: _number(e, key, cast, default)
    try:
        if kind is Kind.CONV:
            if "out" not in e or "k" not in e:
                raise ValidationError("conv layer needs 'out' and 'k'", name)
            params = ConvParams(num("k"), num("stride", default=1), num("pad", default=0))
            return LayerDescriptor(name, kind, inputs, params, num("out"))
        if kind is Kind.MAXPOOL:
            if "window" not in e:
                raise ValidationError("maxpool layer needs 'window'", name)
            window = num("window")
            params = PoolParams(window, num("stride", default=window), pad=num("pad", default=0))
            return LayerDescriptor(name, kind, inputs, params)
        if kind is Kind.LRN:
            d = LrnParams()
            params = LrnParams(num("n", default=d.n), num("kfac", float, d.k),
                               num("alpha", float, d.alpha), num("beta", float, d.beta))
            return LayerDescriptor(name, kind, inputs, params)
        if kind is Kind.FC:
            if "out" not in e:
                raise ValidationError("fc layer needs 'out'", name)
            return LayerDescriptor(name, kind, inputs, None, num("out"))
    except ShapeError as err:
        raise ValidationError(str(err), name) from None
    return LayerDescriptor(name, kind, inputs)


def dump_manifest(graph: NetworkGraph) -> str:
    s = graph.input_shape
    lines = ["[network]", f"input = {s.channels},{s.height},{s.width}"]
    for layer in graph.layers:
        lines += ["", "[layer]", f"name = {layer.name}", f"kind = {layer.kind}"]
        if layer.inputs:
            lines.append(f"inputs = {','.join(layer.inputs)}")
        p = layer.params
        if layer.kind is Kind.CONV:
            lines += [f"out = {layer.out}", f"k = {p.kernel}", f"stride = {p.stride}", f"pad = {p.pad}"]
        elif layer.kind is Kind.MAXPOOL:
            lines += [f"window = {p.window}", f"stride = {p.stride}"]
            if p.pad:
                lines.append(f"pad = {p.pad}")
        elif layer.kind is Kind.LRN:
            lines += [f"n = {p.n}", f"kfac = {p.k!r}", f"alpha = {p.alpha!r}", f"beta = {p.beta!r}"]
        elif layer.kind is Kind.FC:
            lines.append(f"out = {layer.out}")
    return "\n".join(lines) + "\n"


def read_manifest(path) -> NetworkGraph:
    with open(path, encoding="utf-8") as f:
        return load_manifest(f.read())
