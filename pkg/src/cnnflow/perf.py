"""Analytical cost, resource and traffic model.

Counting convention: one multiply-accumulate is two FLOPs. Pooling, ReLU,
LRN, eltwise, concat and softmax are charged non-MAC operations
proportional to their output size and carry no parameters.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

from .errors import CapacityError, ShapeError
from .layers import output_shape
from .model.graph import Kind, NetworkGraph
from .pipeline import plan_segments
from .tensor import Shape3


@dataclass(frozen=True)
class LayerCost:
    macs: int = 0
    flops: int = 0
    params: int = 0
    in_bytes: int = 0
    out_bytes: int = 0

    @property
    def activation_bytes(self):
        return self.in_bytes + self.out_bytes


def layer_cost(layer, in_shape, graph: NetworkGraph | None = None) -> LayerCost:
    """Cost of one layer fed by ``in_shape`` (a Shape3 or a list of them)."""
    in_shapes = [in_shape] if isinstance(in_shape, Shape3) else list(in_shape)
    if not in_shapes and layer.kind is not Kind.INPUT:
        raise ShapeError(f"layer {layer.name!r}: unresolved input shape")
    if layer.kind is Kind.INPUT:
        shape = in_shapes[0] if in_shapes else graph.input_shape
        return LayerCost(out_bytes=shape.nbytes)
    out = output_shape(layer.kind.value, layer.params, in_shapes, layer.out)
    in_bytes = sum(s.nbytes for s in in_shapes)
    n_out = out.size
    src = in_shapes[0]
    if layer.kind is Kind.CONV:
        k = layer.params.kernel
        macs = out.channels * src.channels * k * k * out.height * out.width
        params = out.channels * src.channels * k * k + out.channels
        return LayerCost(macs, 2 * macs, params, in_bytes, out.nbytes)
    if layer.kind is Kind.FC:
        macs = layer.out * src.size
        return LayerCost(macs, 2 * macs, macs + layer.out, in_bytes, out.nbytes)
    if layer.kind is Kind.MAXPOOL:
        ops = n_out * layer.params.window ** 2
    elif layer.kind is Kind.LRN:
        # n squares + n adds, then scale, power and divide
        ops = n_out * (2 * layer.params.n + 3)
    elif layer.kind is Kind.SOFTMAX:
        ops = 3 * n_out
    else:
        ops = n_out
    return LayerCost(0, ops, 0, in_bytes, out.nbytes)


def graph_costs(graph: NetworkGraph) -> dict:
    return {l.name: layer_cost(l, graph.in_shapes(l.name) or [graph.input_shape], graph)
            for l in graph.ordered()}


def total_cost(graph: NetworkGraph) -> LayerCost:
    costs = graph_costs(graph).values()
    return LayerCost(sum(c.macs for c in costs), sum(c.flops for c in costs),
                     sum(c.params for c in costs), 0, 0)


def conv_fc_flops(graph: NetworkGraph) -> int:
    costs = graph_costs(graph)
    return sum(costs[l.name].flops for l in graph.weighted_layers())


def _bucket(kind):
    if kind is Kind.CONV:
        return "CONV"
    if kind is Kind.FC:
        return "FC"
    return "other"


@dataclass(frozen=True)
class DistributionReport:
    params: dict
    ops: dict
    total_params: int
    total_ops: int

    def weighted_share(self, what="params"):
        d = getattr(self, what)
        return d["CONV"] + d["FC"]


def distribution_report(graph: NetworkGraph) -> DistributionReport:
    """Shares of parameters and operations held by CONV, FC and other layers."""
    params = {"CONV": 0, "FC": 0, "other": 0}
    ops = dict(params)
    for name, c in graph_costs(graph).items():
        b = _bucket(graph[name].kind)
        params[b] += c.params
        ops[b] += c.flops
    tp, to = sum(params.values()), sum(ops.values())
    share = lambda d, t: {k: (v / t if t else 0.0) for k, v in d.items()}
    return DistributionReport(share(params, tp), share(ops, to), tp, to)


# -- resources -----------------------------------------------------------------

@dataclass(frozen=True)
class Device:
    label: str
    dsp_total: int
    logic_elements: int
    dsp_per_mac: int = 1


DEVICES = {
    "arria10": Device("Arria 10 GX", 1687, 660_000),
    "stratix10": Device("Stratix 10 GX 2800", 5760, 2_753_000),
}

DEFAULT_CLOCK_GHZ = 0.2


@dataclass(frozen=True)
class VectorConfig:
    lanes_oc: int = 1
    lanes_ic: int = 1

    def __post_init__(self):
        if self.lanes_oc < 1 or self.lanes_ic < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes_oc}x{self.lanes_ic}")

    @classmethod
    def parse(cls, text: str) -> "VectorConfig":
        """Parse ``"OCxIC"``, e.g. ``"16x8"``."""
        try:
            oc, ic = (int(v) for v in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"lanes must look like OCxIC, got {text!r}") from None
        return cls(oc, ic)

    @property
    def lanes(self):
        return self.lanes_oc * self.lanes_ic


@dataclass(frozen=True)
class ResourceEstimate:
    device: str
    dsp_used: int
    dsp_total: int
    projected_gflops: float
    performance_density: float
    clock_ghz: float
    classification_ms: float


def get_device(name: str) -> Device:
    try:
        return DEVICES[name]
    except KeyError:
        raise CapacityError(
            f"unknown device {name!r}; known devices: {', '.join(sorted(DEVICES))}") from None


def estimate_resources(graph: NetworkGraph, vec: VectorConfig, device: str = "arria10",
                       clock_ghz: float = DEFAULT_CLOCK_GHZ,
                       dsp_per_mac: int | None = None) -> ResourceEstimate:
    """DSP usage and projected throughput of a ``lanes_oc x lanes_ic`` MAC array.

    Performance density is projected GFLOP/s per DSP used. The classification
    time assumes every conv/FC FLOP runs on the array at peak.
    """
    dev = get_device(device)
    per_mac = dev.dsp_per_mac if dsp_per_mac is None else dsp_per_mac
    used = vec.lanes * per_mac
    if used > dev.dsp_total:
        raise CapacityError(
            f"{vec.lanes_oc}x{vec.lanes_ic} lanes need {used} DSPs, "
            f"{device} has {dev.dsp_total}")
    gflops = 2 * vec.lanes * clock_ghz
    ms = conv_fc_flops(graph) / (gflops * 1e9) * 1e3
    return ResourceEstimate(device, used, dev.dsp_total, gflops, gflops / used, clock_ghz, ms)


# -- global-memory traffic -----------------------------------------------------

def traffic_breakdown(graph: NetworkGraph, fused: bool = True) -> tuple[int, int]:
    """Predicted ``(bytes_read_global, bytes_written_global)`` of a run."""
    plans = plan_segments(graph, fuse=fused)
    return (sum(p.read_bytes for p in plans), sum(p.write_bytes for p in plans))


def traffic_projection(graph: NetworkGraph, fused: bool = True) -> int:
    read, written = traffic_breakdown(graph, fused)
    return read + written


def elided_bytes(graph: NetworkGraph) -> int:
    """Bytes of interlayer tensors that fusion keeps out of global memory."""
    total = 0
    for p in plan_segments(graph, fuse=True):
        total += sum(graph.shapes[l.name].nbytes for l in p.layers[:-1])
    return total


# -- reports ---------------------------------------------------------------------

CSV_COLUMNS = ("layer", "kind", "macs", "flops", "params", "in_bytes", "out_bytes")


def cost_rows(graph: NetworkGraph):
    rows = []
    for name, c in graph_costs(graph).items():
        rows.append({"layer": name, "kind": str(graph[name].kind), "macs": c.macs,
                     "flops": c.flops, "params": c.params, "in_bytes": c.in_bytes,
                     "out_bytes": c.out_bytes})
    return rows


def cost_csv(graph: NetworkGraph) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(cost_rows(graph))
    return buf.getvalue()


def format_report(graph: NetworkGraph, estimate: ResourceEstimate | None = None) -> str:
    dist = distribution_report(graph)
    tot = total_cost(graph)
    lines = [f"{'layer':<16}{'kind':<12}{'MACs':>16}{'params':>14}{'out bytes':>14}"]
    for r in cost_rows(graph):
        lines.append(f"{r['layer']:<16}{r['kind']:<12}{r['macs']:>16,}{r['params']:>14,}"
                     f"{r['out_bytes']:>14,}")
    lines.append(f"total MACs {tot.macs:,}  FLOPs {tot.flops:,}  params {tot.params:,}")
    lines.append("")
    lines.append("share      params      ops")
    for k in ("CONV", "FC", "other"):
        lines.append(f"{k:<8}{dist.params[k]:>9.4%}{dist.ops[k]:>10.4%}")
    lines.append(f"CONV+FC {dist.weighted_share('params'):>9.4%}{dist.weighted_share('ops'):>10.4%}")
    lines.append("")
    for fused in (True, False):
        r, w = traffic_breakdown(graph, fused)
        tag = "fused" if fused else "unfused"
        lines.append(f"global traffic ({tag}): read {r:,} B, written {w:,} B, total {r + w:,} B")
    if estimate is not None:
        lines.append("")
        lines.append("device      precision  DSPs used/total  GFLOP/s  GFLOP/s/DSP  time (ms)")
        e = estimate
        lines.append(f"{e.device:<12}{'float32':<11}{e.dsp_used:>6}/{e.dsp_total:<10}"
                     f"{e.projected_gflops:>8.1f}{e.performance_density:>13.4f}"
                     f"{e.classification_ms:>11.2f}")
    return "\n".join(lines)


def estimate_dict(e: ResourceEstimate) -> dict:
    return asdict(e)
