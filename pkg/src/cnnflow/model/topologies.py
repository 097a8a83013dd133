"""Builders for the benchmark networks.

``scale="full"`` follows the published layer dimensions. ``scale="desk"``
keeps every layer kind, the layer order and the connectivity, divides all
channel / feature counts by 8 (minimum 4) and feeds a (3, 32, 32) input.
Batch normalisation and dropout are not modelled; ResNet-50 ends in a global
max pool because average pooling is not a supported layer.
"""

from __future__ import annotations

from ..errors import ValidationError
from ..layers import ConvParams, LrnParams, PoolParams
from ..tensor import Shape3
from .graph import Kind, LayerDescriptor, NetworkGraph

TOPOLOGIES = ("alexnet", "vgg11", "vgg16", "vgg19", "resnet50")
SCALES = ("full", "desk")

_VGG = {
    "vgg11": [64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M"],
    "vgg16": [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
              512, 512, 512, "M", 512, 512, 512, "M"],
    "vgg19": [64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
              512, 512, 512, 512, "M", 512, 512, 512, 512, "M"],
}


class _Builder:
    def __init__(self, input_shape, scale):
        self.input_shape = input_shape
        self.desk = scale == "desk"
        self.layers = [LayerDescriptor("data", Kind.INPUT)]
        self.last = "data"

    def ch(self, n):
        return max(4, n // 8) if self.desk else n

    def add(self, name, kind, params=None, out=None, inputs=None):
        inputs = [self.last] if inputs is None else inputs
        self.layers.append(LayerDescriptor(name, kind, inputs, params, out))
        self.last = name
        return name

    def conv(self, name, out, k, stride=1, pad=0, inputs=None):
        return self.add(name, Kind.CONV, ConvParams(k, stride, pad), self.ch(out), inputs)

    def fc(self, name, out):
        return self.add(name, Kind.FC, out=self.ch(out))

    def relu(self, name):
        return self.add(name, Kind.RELU)

    def pool(self, name, window, stride, pad=0):
        return self.add(name, Kind.MAXPOOL, PoolParams(window, stride, pad=pad))

    def graph(self):
        return NetworkGraph(self.layers, self.input_shape)


def alexnet(scale="full"):
    b = _Builder(Shape3(3, 32, 32) if scale == "desk" else Shape3(3, 227, 227), scale)
    if b.desk:
        b.conv("conv1", 96, 11, stride=1, pad=5)
    else:
        b.conv("conv1", 96, 11, stride=4)
    b.relu("relu1")
    b.pool("pool1", 3, 2)
    b.add("norm1", Kind.LRN, LrnParams())
    b.conv("conv2", 256, 5, pad=2)
    b.relu("relu2")
    b.pool("pool2", 3, 2)
    b.add("norm2", Kind.LRN, LrnParams())
    b.conv("conv3", 384, 3, pad=1)
    b.relu("relu3")
    b.conv("conv4", 384, 3, pad=1)
    b.relu("relu4")
    b.conv("conv5", 256, 3, pad=1)
    b.relu("relu5")
    b.pool("pool5", 3, 2)
    b.fc("fc6", 4096)
    b.relu("relu6")
    b.fc("fc7", 4096)
    b.relu("relu7")
    b.fc("fc8", 1000)
    b.add("prob", Kind.SOFTMAX)
    return b.graph()


def vgg(name, scale="full"):
    b = _Builder(Shape3(3, 32, 32) if scale == "desk" else Shape3(3, 224, 224), scale)
    stage, idx = 1, 1
    for item in _VGG[name]:
        if item == "M":
            b.pool(f"pool{stage}", 2, 2)
            stage, idx = stage + 1, 1
        else:
            b.conv(f"conv{stage}_{idx}", item, 3, pad=1)
            b.relu(f"relu{stage}_{idx}")
            idx += 1
    b.fc("fc6", 4096)
    b.relu("relu6")
    b.fc("fc7", 4096)
    b.relu("relu7")
    b.fc("fc8", 1000)
    b.add("prob", Kind.SOFTMAX)
    return b.graph()


def resnet50(scale="full"):
    """Bottleneck ResNet-50 with 1x1 stride-2 projection shortcuts.

    Downsampling happens in the 3x3 conv of the first block of stages 3-5.
    """
    b = _Builder(Shape3(3, 32, 32) if scale == "desk" else Shape3(3, 224, 224), scale)
    b.conv("conv1", 64, 7, stride=2, pad=3)
    b.relu("conv1_relu")
    b.pool("pool1", 3, 2, pad=1)
    for stage, (blocks, width) in enumerate(zip((3, 4, 6, 3), (64, 128, 256, 512)), start=2):
        for i in range(blocks):
            stride = 2 if stage > 2 and i == 0 else 1
            tag = f"res{stage}{chr(ord('a') + i)}"
            block_in = b.last
            b.conv(f"{tag}_a", width, 1)
            b.relu(f"{tag}_a_relu")
            b.conv(f"{tag}_b", width, 3, stride=stride, pad=1)
            b.relu(f"{tag}_b_relu")
            main = b.conv(f"{tag}_c", width * 4, 1)
            if i == 0:
                shortcut = b.conv(f"{tag}_proj", width * 4, 1, stride=stride, inputs=[block_in])
            else:
                shortcut = block_in
            b.add(f"{tag}_add", Kind.ELTWISE_ADD, inputs=[main, shortcut])
            b.relu(f"{tag}_relu")
    spatial = b.graph().output_shape.height
    b.pool("pool5", spatial, 1)
    b.fc("fc1000", 1000)
    b.add("prob", Kind.SOFTMAX)
    return b.graph()


def build_reference_topology(name: str, scale: str = "full") -> NetworkGraph:
    if scale not in SCALES:
        raise ValidationError(f"unknown scale {scale!r}; expected one of {SCALES}")
    if name == "alexnet":
        return alexnet(scale)
    if name in _VGG:
        return vgg(name, scale)
    if name == "resnet50":
        return resnet50(scale)
    raise ValidationError(f"unknown topology {name!r}; expected one of {TOPOLOGIES}")
