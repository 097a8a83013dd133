"""Command-line front end: ``cnnflow {run,verify,stats,bench}``.

Errors go to stderr as ``CATEGORY: message`` with exit status 2; a failed
verification exits with status 1.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from .errors import CnnFlowError
from .layers import ACCUM_MODES
from .model import (
    TOPOLOGIES,
    build_reference_topology,
    random_weights,
    read_manifest,
    read_tensor,
    read_weights,
    save_tensor,
)
from .perf import (
    VectorConfig,
    cost_csv,
    estimate_resources,
    format_report,
    get_device,
)
from .pipeline import ChannelConfig, max_errors, run_network, run_reference
from .tensor import DTYPE, Tensor

TREE_RTOL = 1e-5


@dataclass
class RunConfig:
    manifest: str | None = None
    topology: str | None = None
    scale: str = "desk"
    weights: str | None = None
    seed: int | None = None
    depth: int = 4
    tile_rows: int | None = 8
    accum: str = "sequential"
    fused: bool = True
    device: str = "arria10"
    lanes: str = "1x1"

    def __post_init__(self):
        if (self.weights is None) == (self.seed is None):
            raise ValueError("give exactly one of a weights file or a seed")

    @property
    def channels(self):
        return ChannelConfig(self.depth, self.tile_rows)


def _graph(args):
    if args.manifest is not None:
        return read_manifest(args.manifest)
    return build_reference_topology(args.topology, args.scale)


def _store(cfg, graph, seed=None):
    if cfg.weights is not None:
        return read_weights(cfg.weights, graph)
    return random_weights(graph, cfg.seed if seed is None else seed)


def _input(path, graph, seed):
    if path is not None:
        return read_tensor(path)
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-1.0, 1.0, graph.input_shape.as_tuple()).astype(DTYPE))


def _config(args):
    return RunConfig(manifest=args.manifest, topology=args.topology, scale=args.scale,
                     weights=args.weights, seed=args.seed, depth=args.depth,
                     tile_rows=args.tile_rows, accum=args.accum, fused=args.fused,
                     device=getattr(args, "device", "arria10"),
                     lanes=getattr(args, "lanes", "1x1"))


def _ledger_line(ledger):
    return (f"global read {ledger.bytes_read_global} B, written {ledger.bytes_written_global} B, "
            f"channels {ledger.bytes_moved_channels} B")


def cmd_run(args, out=sys.stdout):
    cfg = _config(args)
    graph = _graph(args)
    store = _store(cfg, graph)
    x = _input(args.input, graph, args.input_seed)
    t0 = time.perf_counter()
    y, ledger = run_network(graph, x, store, cfg.channels, cfg.accum, fuse=cfg.fused)
    dt = time.perf_counter() - t0
    if args.output:
        save_tensor(args.output, y)
    print(f"output {y.shape} ({'fused' if cfg.fused else 'unfused'}, {cfg.accum})", file=out)
    print(_ledger_line(ledger), file=out)
    print(f"wall-clock {dt * 1e3:.1f} ms", file=out)
    if args.csv:
        _write_csv(args.csv, [{**ledger.as_dict(), "wall_clock_s": dt}])
    return 0


def cmd_verify(args, out=sys.stdout):
    cfg = _config(args)
    graph = _graph(args)
    trials = args.trials if cfg.seed is not None else 1
    tol = 0.0 if cfg.accum == "sequential" else TREE_RTOL
    worst_abs = worst_rel = 0.0
    for t in range(trials):
        store = _store(cfg, graph, None if cfg.seed is None else cfg.seed + t)
        x = _input(args.input, graph, args.input_seed + t)
        want, got = {}, {}
        run_reference(graph, x, store, trace=want)
        run_network(graph, x, store, cfg.channels, cfg.accum, fuse=cfg.fused, trace=got)
        # every tensor the pipeline materialised, not just the (often saturated) output
        for name, tensor in got.items():
            a, r = max_errors(tensor, want[name])
            worst_abs, worst_rel = max(worst_abs, a), max(worst_rel, r)
    ok = worst_rel <= tol if tol else worst_abs == 0.0
    verdict = "PASS" if ok else "FAIL"
    print(f"{verdict} accum={cfg.accum} trials={trials} max_abs_err={worst_abs:.3e} "
          f"max_rel_err={worst_rel:.3e} tolerance={tol:g}", file=out)
    if args.csv:
        _write_csv(args.csv, [{"verdict": verdict, "accum": cfg.accum, "trials": trials,
                               "max_abs_err": worst_abs, "max_rel_err": worst_rel,
                               "tolerance": tol}])
    return 0 if ok else 1


def cmd_stats(args, out=sys.stdout):
    get_device(args.device)
    graph = _graph(args)
    est = estimate_resources(graph, VectorConfig.parse(args.lanes), args.device)
    print(format_report(graph, est), file=out)
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            f.write(cost_csv(graph))
    return 0


def cmd_bench(args, out=sys.stdout):
    cfg = _config(args)
    if args.repeats < 1:
        raise ValueError("--repeats must be >= 1")
    graph = _graph(args)
    store = _store(cfg, graph)
    x = _input(args.input, graph, args.input_seed)
    rows = []
    first = None
    for i in range(args.repeats):
        t0 = time.perf_counter()
        y, _ = run_network(graph, x, store, cfg.channels, cfg.accum, fuse=True)
        t1 = time.perf_counter()
        run_reference(graph, x, store)
        t2 = time.perf_counter()
        if first is None:
            first = y
        elif y != first:
            raise CnnFlowError("pipelined output changed between repeats")
        rows.append({"repeat": i, "fused_pipelined_s": t1 - t0, "unfused_sequential_s": t2 - t1})
    print(f"{'repeat':>6} {'fused_pipelined_s':>18} {'unfused_sequential_s':>21}", file=out)
    for r in rows:
        print(f"{r['repeat']:>6} {r['fused_pipelined_s']:>18.4f} {r['unfused_sequential_s']:>21.4f}",
              file=out)
    fused = statistics.median(r["fused_pipelined_s"] for r in rows)
    unfused = statistics.median(r["unfused_sequential_s"] for r in rows)
    print(f"median per image: fused-pipelined {fused:.4f} s, unfused-sequential {unfused:.4f} s "
          f"({os.cpu_count()} hardware threads)", file=out)
    if args.csv:
        _write_csv(args.csv, rows)
    return 0


def _write_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _tile_rows(text):
    if text == "full":
        return None
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("tile rows must be >= 1 or 'full'")
    return v


def _accum(text):
    return {"seq": "sequential", "tree": "tree"}.get(text, text)


def build_parser():
    p = argparse.ArgumentParser(prog="cnnflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def net_args(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--manifest", help="network manifest file")
        src.add_argument("--topology", choices=TOPOLOGIES, help="built-in benchmark network")
        sp.add_argument("--scale", choices=("full", "desk"), default="desk",
                        help="size of a --topology network")

    def run_args(sp):
        net_args(sp)
        w = sp.add_mutually_exclusive_group(required=True)
        w.add_argument("--weights", help="binary weight file")
        w.add_argument("--seed", type=int, help="seed for random weights")
        sp.add_argument("--input", help="input tensor file (default: random from --input-seed)")
        sp.add_argument("--input-seed", type=int, default=0)
        sp.add_argument("--depth", type=int, default=4, help="channel depth in tiles")
        sp.add_argument("--tile-rows", type=_tile_rows, default=8, help="rows per tile or 'full'")
        sp.add_argument("--accum", type=_accum, choices=ACCUM_MODES, default="sequential")
        sp.add_argument("--fused", action=argparse.BooleanOptionalAction, default=True)
        sp.add_argument("--csv", help="write machine-readable rows here")

    sp = sub.add_parser("run", help="run a network through the pipeline")
    run_args(sp)
    sp.add_argument("--output", help="output tensor file")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("verify", help="compare the pipeline with the reference executor")
    run_args(sp)
    sp.add_argument("--trials", type=int, default=1,
                    help="number of consecutive weight/input seeds (with --seed)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("stats", help="cost, distribution, resource and traffic report")
    net_args(sp)
    sp.add_argument("--device", default="arria10")
    sp.add_argument("--lanes", default="1x1", help="vector lanes as OCxIC")
    sp.add_argument("--csv", help="write the per-layer cost table here")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("bench", help="time fused-pipelined vs unfused-sequential execution")
    run_args(sp)
    sp.add_argument("--repeats", type=int, default=3)
    sp.set_defaults(func=cmd_bench)
    return p


def _category(exc):
    if isinstance(exc, CnnFlowError):
        return exc.category
    if isinstance(exc, OSError):
        return "IO"
    return "PARSE"


def main(argv=None, out=sys.stdout, err=sys.stderr):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out=out)
    except (CnnFlowError, OSError, ValueError) as e:
        print(f"{_category(e)}: {e}", file=err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
