"""Running a network through the four-stage streaming pipeline.

Adjacent Conv -> ReLU -> Pool/LRN layers run inside one pipeline pass, so
their intermediate tensors never reach global memory. The ledger returned
by run_network counts the bytes that do.
"""
import numpy as np

from cnnflow import ChannelConfig, Tensor, plan_segments, run_network, run_network_unfused, run_reference
from cnnflow.model import build_reference_topology, random_weights
from cnnflow.perf import elided_bytes, traffic_breakdown

g = build_reference_topology("alexnet", "desk")
w = random_weights(g, seed=1)
x = Tensor(np.random.default_rng(1).uniform(-1, 1, g.input_shape.as_tuple()).astype(np.float32))

print("segments:")
for plan in plan_segments(g):
    print("  ", {k: v for k, v in plan.stages.items() if v})

ref = run_reference(g, x, w)
for cfg in (ChannelConfig(depth=1, tile_rows=1), ChannelConfig(depth=64, tile_rows=None)):
    out, _ = run_network(g, x, w, cfg)
    print(f"depth={cfg.depth:<3} tile_rows={cfg.tile_rows}: equals reference -> {out == ref}")

_, fused = run_network(g, x, w)
_, unfused = run_network_unfused(g, x, w)
print("fused  ", fused)
print("unfused", unfused)
print("projected (fused)  ", traffic_breakdown(g, True))
print("projected (unfused)", traffic_breakdown(g, False))
print("bytes of interlayer tensors kept on chip:", elided_bytes(g))
