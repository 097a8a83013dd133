import numpy as np
import pytest

from cnnflow.layers import ConvParams
from cnnflow.model import Kind, LayerDescriptor, NetworkGraph
from cnnflow.layers import PoolParams
from cnnflow.tensor import ConvWeights, Shape3, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tensor(rng, c, h, w, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, (c, h, w)).astype(np.float32))


def random_conv(rng, out, cin, k):
    return ConvWeights(rng.uniform(-0.5, 0.5, (out, cin, k, k)),
                       rng.uniform(-0.5, 0.5, out))


def conv_relu_pool_graph(c=3, h=32, w=32, out=8, k=3, pad=1):
    layers = [
        LayerDescriptor("data", Kind.INPUT),
        LayerDescriptor("conv", Kind.CONV, ["data"], ConvParams(k, 1, pad), out),
        LayerDescriptor("relu", Kind.RELU, ["conv"]),
        LayerDescriptor("pool", Kind.MAXPOOL, ["relu"], PoolParams(2, 2)),
    ]
    return NetworkGraph(layers, Shape3(c, h, w))
