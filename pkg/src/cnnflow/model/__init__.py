"""Network descriptions, weight storage and benchmark topologies."""

from .graph import WEIGHTED, Kind, LayerDescriptor, NetworkGraph
from .manifest import dump_manifest, load_manifest, read_manifest
from .topologies import SCALES, TOPOLOGIES, build_reference_topology
from .weights import (
    WeightStore,
    dump_tensor,
    dump_weights,
    load_tensor,
    load_weights,
    random_weights,
    read_tensor,
    read_weights,
    save_tensor,
    save_weights,
)

__all__ = [
    "WEIGHTED", "Kind", "LayerDescriptor", "NetworkGraph",
    "dump_manifest", "load_manifest", "read_manifest",
    "SCALES", "TOPOLOGIES", "build_reference_topology",
    "WeightStore", "dump_tensor", "dump_weights", "load_tensor", "load_weights",
    "random_weights", "read_tensor", "read_weights", "save_tensor", "save_weights",
]
