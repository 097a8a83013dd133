import threading
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cnnflow.errors import PipelineError, ShapeError
from cnnflow.layers import ConvParams, LrnParams, PoolParams, conv2d_flat
from cnnflow.model import (
    Kind,
    LayerDescriptor,
    NetworkGraph,
    WeightStore,
    build_reference_topology,
    random_weights,
)
from cnnflow.pipeline import (
    ChannelConfig,
    MemTrafficLedger,
    plan_segments,
    run_network,
    run_network_unfused,
    run_reference,
    run_segment,
)
from cnnflow.tensor import Shape3, Tensor

from conftest import conv_relu_pool_graph, random_tensor

F32 = 4


def chain(shape, *specs):
    layers = [LayerDescriptor("data", Kind.INPUT)]
    for name, kind, params, out in specs:
        layers.append(LayerDescriptor(name, kind, [layers[-1].name], params, out))
    return NetworkGraph(layers, Shape3(*shape))


def residual_graph():
    layers = [
        LayerDescriptor("data", Kind.INPUT),
        LayerDescriptor("conv_a", Kind.CONV, ["data"], ConvParams(3, 1, 1), 4),
        LayerDescriptor("relu_a", Kind.RELU, ["conv_a"]),
        LayerDescriptor("conv_b", Kind.CONV, ["relu_a"], ConvParams(3, 1, 1), 4),
        LayerDescriptor("add", Kind.ELTWISE_ADD, ["conv_b", "data"]),
        LayerDescriptor("relu", Kind.RELU, ["add"]),
    ]
    return NetworkGraph(layers, Shape3(4, 6, 6))


def concat_graph():
    layers = [
        LayerDescriptor("data", Kind.INPUT),
        LayerDescriptor("b1", Kind.CONV, ["data"], ConvParams(1), 3),
        LayerDescriptor("b2", Kind.CONV, ["data"], ConvParams(3, 1, 1), 5),
        LayerDescriptor("b2_relu", Kind.RELU, ["b2"]),
        LayerDescriptor("cat", Kind.CONCAT, ["b1", "b2_relu"]),
        LayerDescriptor("pool", Kind.MAXPOOL, ["cat"], PoolParams(3, 2, pad=1)),
        LayerDescriptor("norm", Kind.LRN, ["pool"], LrnParams(3, 1.0, 0.5, 0.75)),
        LayerDescriptor("fc", Kind.FC, ["norm"], None, 6),
        LayerDescriptor("prob", Kind.SOFTMAX, ["fc"]),
    ]
    return NetworkGraph(layers, Shape3(2, 7, 7))


# -- planning ------------------------------------------------------------------

def test_conv_relu_pool_is_one_segment():
    plans = plan_segments(conv_relu_pool_graph())
    assert len(plans) == 1
    p = plans[0]
    assert [l.name for l in p.layers] == ["conv", "relu", "pool"]
    assert p.stages == {"data_in": [], "compute": ["conv", "relu"], "aux": ["pool"], "data_out": []}


def test_residual_join_terminates_segment():
    plans = plan_segments(residual_graph())
    assert [[l.name for l in p.layers] for p in plans] == [
        ["conv_a", "relu_a"], ["conv_b"], ["add"], ["relu"]]
    add = plans[2]
    assert add.inputs == ("conv_b", "data")
    assert add.read_bytes == 2 * 4 * 6 * 6 * F32


def test_fc_only_network_has_one_segment_per_layer():
    g = chain((8, 1, 1), ("fc1", Kind.FC, None, 6), ("fc2", Kind.FC, None, 4), ("fc3", Kind.FC, None, 2))
    assert [[l.name for l in p.layers] for p in plan_segments(g)] == [["fc1"], ["fc2"], ["fc3"]]


def test_pool_then_lrn_fuses_in_either_order():
    g = build_reference_topology("alexnet", "desk")
    first = plan_segments(g)[0]
    assert [l.name for l in first.layers] == ["conv1", "relu1", "pool1", "norm1"]


def test_every_layer_in_exactly_one_stage():
    for name in ("alexnet", "resnet50", "vgg11"):
        g = build_reference_topology(name, "desk")
        seen = []
        for p in plan_segments(g):
            stage_names = [n for names in p.stages.values() for n in names]
            assert sorted(stage_names) == sorted(l.name for l in p.layers)
            seen += stage_names
        assert sorted(seen) == sorted(l.name for l in g.layers if l.kind is not Kind.INPUT)


def test_ndrange_spaces():
    p = plan_segments(conv_relu_pool_graph())[0]
    assert p.ndrange(ChannelConfig(4, 8)) == {"data_in": (3, 4, 32), "data_out": (8, 16, 16)}
    assert p.ndrange(ChannelConfig(4, None))["data_in"] == (3, 1, 32)


# -- segments ------------------------------------------------------------------

def test_single_conv_segment_matches_flat_conv(rng):
    g = chain((1, 4, 4), ("conv", Kind.CONV, ConvParams(3, 1, 1), 2))
    w = random_weights(g, 3)
    x = random_tensor(rng, 1, 4, 4)
    ledger = MemTrafficLedger()
    plan = plan_segments(g)[0]
    out = run_segment(plan, x, w, ChannelConfig(2, 1), ledger)
    assert out == conv2d_flat(x, w["conv"], ConvParams(3, 1, 1))
    assert ledger.bytes_read_global == x.nbytes + w["conv"].nbytes
    assert ledger.bytes_written_global == out.nbytes


def test_conv_pool_writes_only_pooled_output(rng):
    g = chain((2, 8, 8), ("conv", Kind.CONV, ConvParams(3, 1, 1), 4),
              ("pool", Kind.MAXPOOL, PoolParams(2, 2), None))
    w = random_weights(g, 0)
    x = random_tensor(rng, 2, 8, 8)
    out, ledger = run_network(g, x, w, ChannelConfig(1, 3))
    assert ledger.bytes_written_global == 4 * 4 * 4 * F32
    assert out == run_reference(g, x, w)


def test_channel_depth_does_not_change_output(rng):
    g = build_reference_topology("alexnet", "desk")
    w = random_weights(g, 2)
    x = random_tensor(rng, 3, 32, 32)
    a, la = run_network(g, x, w, ChannelConfig(1, 2))
    b, lb = run_network(g, x, w, ChannelConfig(8, 2))
    assert a == b
    assert la.as_dict() == lb.as_dict()


def test_channel_conservation(rng):
    g = concat_graph()
    w = random_weights(g, 0)
    x = random_tensor(rng, 2, 7, 7)
    memory = {g.input_name: x}
    for plan in plan_segments(g):
        chans = []
        memory[plan.output] = run_segment(plan, [memory[n] for n in plan.inputs], w,
                                          ChannelConfig(1, 2), channels=chans)
        assert len(chans) == 3
        for ch in chans:
            assert ch.bytes_in == ch.bytes_out > 0


def test_segment_rejects_wrong_input_shape(rng):
    plan = plan_segments(conv_relu_pool_graph())[0]
    w = random_weights(conv_relu_pool_graph(), 0)
    with pytest.raises(ShapeError, match="data -> conv"):
        run_segment(plan, random_tensor(rng, 3, 16, 16), w)


def test_network_rejects_wrong_input_shape(rng):
    g = conv_relu_pool_graph()
    with pytest.raises(ShapeError, match="edge"):
        run_network(g, random_tensor(rng, 2, 32, 32), random_weights(g, 0))


def test_worker_failure_surfaces_without_deadlock(rng):
    g = conv_relu_pool_graph(h=64, w=64)
    x = random_tensor(rng, 3, 64, 64)
    empty = WeightStore({})
    t0 = time.perf_counter()
    with pytest.raises(PipelineError) as exc:
        run_network(g, x, empty, ChannelConfig(1, 1))
    assert isinstance(exc.value.__cause__, KeyError)
    assert time.perf_counter() - t0 < 10
    assert threading.active_count() < 10


# -- networks ------------------------------------------------------------------

def test_identity_graph(rng):
    g = NetworkGraph([LayerDescriptor("data", Kind.INPUT)], Shape3(2, 3, 3))
    x = random_tensor(rng, 2, 3, 3)
    out, ledger = run_network(g, x, WeightStore({}))
    assert out == x
    assert ledger.bytes_read_global == ledger.bytes_written_global == x.nbytes


@pytest.mark.parametrize("graph", [residual_graph, concat_graph, conv_relu_pool_graph])
def test_network_matches_reference(graph, rng):
    g = graph()
    w = random_weights(g, 11)
    x = random_tensor(rng, *g.input_shape.as_tuple())
    ref = run_reference(g, x, w)
    for cfg in (ChannelConfig(1, 1), ChannelConfig(3, 2), ChannelConfig(64, None)):
        fused, _ = run_network(g, x, w, cfg)
        unfused, _ = run_network_unfused(g, x, w, cfg)
        assert fused == ref
        assert unfused == ref


def test_unfused_saves_nothing_for_single_layer(rng):
    g = chain((2, 5, 5), ("conv", Kind.CONV, ConvParams(3), 3))
    w = random_weights(g, 0)
    x = random_tensor(rng, 2, 5, 5)
    _, a = run_network(g, x, w)
    _, b = run_network_unfused(g, x, w)
    assert a.bytes_read_global == b.bytes_read_global
    assert a.bytes_written_global == b.bytes_written_global


def test_unfused_conv_relu_pool_writes_interlayer_tensors(rng):
    g = conv_relu_pool_graph()
    w = random_weights(g, 0)
    x = random_tensor(rng, 3, 32, 32)
    _, fused = run_network(g, x, w)
    _, unfused = run_network_unfused(g, x, w)
    conv_bytes = relu_bytes = 8 * 32 * 32 * F32
    assert unfused.bytes_written_global - fused.bytes_written_global == conv_bytes + relu_bytes
    assert unfused.bytes_read_global - fused.bytes_read_global == conv_bytes + relu_bytes


def test_resnet_materialises_at_joins(rng):
    g = build_reference_topology("resnet50", "desk")
    for p in plan_segments(g):
        # joins only ever head a segment, and read every operand from global memory
        for layer in p.layers[1:]:
            assert layer.kind not in (Kind.ELTWISE_ADD, Kind.CONCAT)
        if p.head.kind is Kind.ELTWISE_ADD:
            assert len(p.inputs) == 2
            assert p.read_bytes == sum(g.shapes[n].nbytes for n in p.head.inputs)


def test_tree_mode_close_to_reference(rng):
    g = concat_graph()
    w = random_weights(g, 4)
    x = random_tensor(rng, 2, 7, 7)
    want, got = {}, {}
    run_reference(g, x, w, trace=want)
    run_network(g, x, w, accum="tree", trace=got)
    for name, t in got.items():
        ref = want[name].data
        assert np.abs(t.data - ref).max() <= 1e-5 * np.abs(ref).max()


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(depth=st.integers(1, 64), tile=st.integers(1, 33), seed=st.integers(0, 2**16))
def test_determinism_over_channel_configs(depth, tile, seed):
    g = residual_graph()
    w = random_weights(g, seed)
    x = random_tensor(np.random.default_rng(seed), 4, 6, 6)
    ref = run_reference(g, x, w)
    out, _ = run_network(g, x, w, ChannelConfig(depth, tile))
    assert out == ref


def test_stress_depth_one_terminates(rng):
    g = build_reference_topology("resnet50", "desk")
    w = random_weights(g, 0)
    x = random_tensor(rng, 3, 32, 32)
    for _ in range(3):
        out, _ = run_network(g, x, w, ChannelConfig(1, 1))
        assert out.shape == g.output_shape


def test_channel_config_validation():
    with pytest.raises(ValueError):
        ChannelConfig(0, 1)
    with pytest.raises(ValueError):
        ChannelConfig(1, 0)
