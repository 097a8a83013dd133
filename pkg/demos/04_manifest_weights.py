"""Describing a network in a manifest and shipping its weights in a file."""
import tempfile
from pathlib import Path

import numpy as np

from cnnflow import Tensor, run_network
from cnnflow.errors import CnnFlowError
from cnnflow.model import load_manifest, random_weights, read_weights, save_weights

MANIFEST = """
[network]
input = 3,16,16

[layer]
name = data
kind = input

[layer]
name = conv1
kind = conv
out = 8
k = 3
pad = 1

[layer]
name = relu1
kind = relu

[layer]
name = pool1
kind = maxpool
window = 2
stride = 2

[layer]
name = fc
kind = fc
out = 10

[layer]
name = prob
kind = softmax
"""

g = load_manifest(MANIFEST)
for layer in g.ordered():
    print(f"{layer.name:<6} {layer.kind.value:<8} -> {g.shapes[layer.name].as_tuple()}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "net.weights"
    save_weights(path, random_weights(g, seed=3))
    store = read_weights(path, g)
    print("weight file:", path.stat().st_size, "bytes")
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 16, 16)).astype(np.float32))
    y, _ = run_network(g, x, store)
    print("class probabilities:", np.round(y.flat, 3))

    path.write_bytes(path.read_bytes()[:-7])
    try:
        read_weights(path, g)
    except CnnFlowError as exc:
        print(f"truncated file -> {exc.category}: {exc}")

try:
    load_manifest(MANIFEST.replace("k = 3", "k = three"))
except CnnFlowError as exc:
    print(f"bad manifest -> {exc.category}: {exc}")
