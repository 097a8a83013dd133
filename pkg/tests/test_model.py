import struct

import numpy as np
import pytest

from cnnflow.errors import (
    DimensionError,
    GraphError,
    HeaderError,
    ManifestParseError,
    TruncatedError,
    ValidationError,
)
from cnnflow.layers import ConvParams, FcWeights
from cnnflow.model import (
    SCALES,
    TOPOLOGIES,
    Kind,
    LayerDescriptor,
    NetworkGraph,
    WeightStore,
    build_reference_topology,
    dump_manifest,
    dump_tensor,
    dump_weights,
    load_manifest,
    load_tensor,
    load_weights,
    random_weights,
)
from cnnflow.tensor import ConvWeights, Shape3, Tensor

ALEX_HEAD = """\
# first AlexNet stage
[network]
input = 3,224,224

[layer]
name = data
kind = Input

[layer]
name = conv1
kind = Conv
inputs = data
out = 96
k = 11
stride = 4

[layer]
name = relu1
kind = ReLU
"""


def test_manifest_example_shapes():
    g = load_manifest(ALEX_HEAD)
    assert len(g) == 3
    # floor((224 - 11) / 4) + 1
    assert g.shapes["conv1"] == Shape3(96, (224 - 11) // 4 + 1, 54)
    assert g.shapes["relu1"] == Shape3(96, 54, 54)
    assert g["relu1"].inputs == ("conv1",)


def test_manifest_duplicate_name():
    text = ALEX_HEAD + "\n[layer]\nname = relu1\nkind = relu\n"
    with pytest.raises(ValidationError, match="relu1"):
        load_manifest(text)


def test_manifest_undefined_input():
    text = ALEX_HEAD + "\n[layer]\nname = relu2\nkind = relu\ninputs = nowhere\n"
    with pytest.raises(ValidationError, match="relu2"):
        load_manifest(text)


@pytest.mark.parametrize("text,line", [
    ("[network]\ninput = 3,4\n", 2),
    ("[network]\ninput = 1,4,4\n[layer]\nname = d\nkind = input\n[layer]\nname = c\nkind = conv\nout = x\nk = 3\n", 9),
    ("[network]\ninput = 1,4,4\n[layer\n", 3),
    ("[network]\ninput = 1,4,4\n\n[layer]\nname = d\nkind = banana\n", 6),
    ("[network]\ninput = 1,4,4\n[layer]\nname = d\nkind = input\nwindow = 3\n", 6),
    ("no section = 1\n", 1),
])
def test_manifest_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ManifestParseError) as exc:
        load_manifest(text)
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)


def test_manifest_shape_violation_names_layer():
    text = ALEX_HEAD.replace("k = 11", "k = 300")
    with pytest.raises(ValidationError, match="conv1"):
        load_manifest(text)


def test_cycle_is_rejected():
    layers = [
        LayerDescriptor("data", Kind.INPUT),
        LayerDescriptor("a", Kind.ELTWISE_ADD, ["data", "b"]),
        LayerDescriptor("b", Kind.RELU, ["a"]),
        LayerDescriptor("out", Kind.RELU, ["b"]),
    ]
    with pytest.raises(GraphError, match="cycle"):
        NetworkGraph(layers, Shape3(1, 2, 2))


def test_graph_needs_single_input_and_output():
    with pytest.raises(ValidationError):
        NetworkGraph([LayerDescriptor("r", Kind.RELU, ["r"])], Shape3(1, 1, 1))
    layers = [LayerDescriptor("data", Kind.INPUT),
              LayerDescriptor("a", Kind.RELU, ["data"]),
              LayerDescriptor("b", Kind.RELU, ["data"])]
    with pytest.raises(ValidationError, match="output"):
        NetworkGraph(layers, Shape3(1, 1, 1))


@pytest.mark.parametrize("name", TOPOLOGIES)
@pytest.mark.parametrize("scale", SCALES)
def test_builders_roundtrip_through_manifest(name, scale):
    g = build_reference_topology(name, scale)
    g2 = load_manifest(dump_manifest(g))
    assert g2.order == g.order
    assert g2.shapes == g.shapes
    assert [l for l in g2.layers] == [l for l in g.layers]


def test_alexnet_has_eight_weighted_layers():
    g = build_reference_topology("alexnet", "full")
    kinds = [l.kind for l in g.weighted_layers()]
    assert kinds.count(Kind.CONV) == 5 and kinds.count(Kind.FC) == 3
    assert g.weighted_depth() == 8


def test_resnet50_depth_and_residual_joins():
    full = build_reference_topology("resnet50", "full")
    desk = build_reference_topology("resnet50", "desk")
    assert full.weighted_depth() == 50
    assert desk.weighted_depth() == 50
    adds = [l for l in desk.layers if l.kind is Kind.ELTWISE_ADD]
    assert len(adds) >= 16
    # published stage resolutions at 224x224
    assert full.shapes["res2a_relu"] == Shape3(256, 56, 56)
    assert full.shapes["res3a_relu"] == Shape3(512, 28, 28)
    assert full.shapes["res4a_relu"] == Shape3(1024, 14, 14)
    assert full.shapes["res5c_relu"] == Shape3(2048, 7, 7)


def test_desk_scale_preserves_structure():
    for name in TOPOLOGIES:
        full = build_reference_topology(name, "full")
        desk = build_reference_topology(name, "desk")
        assert desk.input_shape == Shape3(3, 32, 32)
        assert [(l.name, l.kind, l.inputs) for l in full.ordered()] == \
               [(l.name, l.kind, l.inputs) for l in desk.ordered()]
        for lf in full.weighted_layers():
            assert desk[lf.name].out == max(4, lf.out // 8)


def test_unknown_topology():
    with pytest.raises(ValidationError):
        build_reference_topology("lenet")


# -- weights -------------------------------------------------------------------

@pytest.fixture
def small_graph():
    return load_manifest(ALEX_HEAD.replace("224,224", "32,32").replace("stride = 4", "stride = 4\npad = 1")
                         + "\n[layer]\nname = fc\nkind = fc\nout = 5\n")


def test_random_weights_deterministic(small_graph):
    a = random_weights(small_graph, 0)
    b = random_weights(small_graph, 0)
    c = random_weights(small_graph, 1)
    assert a == b
    assert a != c
    w = a["conv1"]
    assert isinstance(w, ConvWeights)
    assert (w.out_channels, w.in_channels, w.kernel) == (96, 3, 11)
    assert w.w4d.min() >= -0.5 and w.w4d.max() <= 0.5


def test_weight_file_roundtrip(small_graph):
    store = random_weights(small_graph, 5)
    blob = dump_weights(store)
    back = load_weights(blob, small_graph)
    assert back == store
    assert dump_weights(back) == blob
    assert np.array_equal(back["conv1"].w_flat, store["conv1"].w_flat)


def test_weight_file_layout(small_graph):
    store = random_weights(small_graph, 5)
    blob = dump_weights(store)
    assert blob[:4] == b"FFCW" and blob[4] == 1
    assert struct.unpack_from("<I", blob, 5)[0] == 2
    nlen = struct.unpack_from("<H", blob, 9)[0]
    assert blob[11:11 + nlen] == b"conv1"
    off = 11 + nlen
    assert blob[off] == 0
    assert struct.unpack_from("<3I", blob, off + 1) == (96, 3, 11)
    first = struct.unpack_from("<f", blob, off + 13)[0]
    assert np.float32(first) == store["conv1"].w4d[0, 0, 0, 0]


def test_weight_file_errors(small_graph):
    blob = dump_weights(random_weights(small_graph, 5))
    with pytest.raises(HeaderError):
        load_weights(b"", small_graph)
    with pytest.raises(HeaderError):
        load_weights(b"XXXX" + blob[4:], small_graph)
    with pytest.raises(TruncatedError):
        load_weights(blob[:-3], small_graph)
    wrong = bytearray(blob)
    off = 11 + len("conv1") + 1
    struct.pack_into("<I", wrong, off, 95)
    with pytest.raises(DimensionError, match="conv1"):
        load_weights(bytes(wrong), small_graph)


def test_store_check_reports_missing_layer(small_graph):
    store = random_weights(small_graph, 0)
    with pytest.raises(DimensionError, match="fc"):
        WeightStore({"conv1": store["conv1"]}, small_graph)
    bad = {"conv1": store["conv1"], "fc": FcWeights(np.zeros((5, 3)), np.zeros(5))}
    with pytest.raises(DimensionError, match="fc"):
        WeightStore(bad, small_graph)


def test_tensor_file_roundtrip(rng):
    t = Tensor(rng.standard_normal((3, 4, 5)))
    blob = dump_tensor(t)
    assert blob[:4] == b"FFCT" and len(blob) == 4 + 1 + 12 + t.nbytes
    assert load_tensor(blob) == t
    with pytest.raises(TruncatedError):
        load_tensor(blob[:-1])


def test_conv_params_in_manifest_default(small_graph):
    assert small_graph["conv1"].params == ConvParams(11, 4, 1)
