"""Counting work and sizing an accelerator.

The cost model counts MACs, FLOPs (2 per MAC) and parameters layer by
layer, then maps an OCxIC vector of multipliers onto a device's DSP budget.
"""
from cnnflow.errors import CapacityError
from cnnflow.model import build_reference_topology
from cnnflow.perf import VectorConfig, conv_fc_flops, distribution_report, estimate_resources, total_cost

for name in ("alexnet", "vgg11", "vgg16", "vgg19", "resnet50"):
    g = build_reference_topology(name, "full")
    t = total_cost(g)
    d = distribution_report(g)
    print(f"{name:<9} conv+fc {conv_fc_flops(g) / 1e9:6.2f} GFLOP  params {t.params / 1e6:6.1f} M"
          f"  CONV+FC share params {d.weighted_share('params'):.4f} ops {d.weighted_share('ops'):.4f}")

g = build_reference_topology("vgg16", "full")
for device, lanes in (("arria10", "32x32"), ("stratix10", "64x64"), ("arria10", "64x64")):
    try:
        e = estimate_resources(g, VectorConfig.parse(lanes), device)
    except CapacityError as exc:
        print(f"{device} {lanes}: rejected ({exc})")
        continue
    print(f"{device} {lanes}: {e.dsp_used}/{e.dsp_total} DSPs, {e.projected_gflops:.1f} GFLOP/s, "
          f"{e.performance_density:.3f} GFLOP/s per DSP, {e.classification_ms:.1f} ms per image")
