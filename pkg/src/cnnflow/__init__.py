"""Streaming CNN inference with flattened convolutions and an FPGA cost model."""

from .errors import (
    BoundsError,
    CapacityError,
    CnnFlowError,
    GraphError,
    PipelineError,
    ShapeError,
    ValidationError,
    WeightFileError,
)
from .layers import (
    ConvParams,
    FcWeights,
    LrnParams,
    PoolParams,
    concat,
    conv2d_direct,
    conv2d_flat,
    eltwise_add,
    fc,
    gather_window,
    lrn,
    maxpool,
    relu,
    softmax,
)
from .pipeline import (
    ChannelConfig,
    MemTrafficLedger,
    StagePlan,
    plan_segments,
    run_network,
    run_network_unfused,
    run_reference,
    run_segment,
)
from .tensor import ConvWeights, Shape3, Tensor, flatten_weights, index, unflatten_weights

__version__ = "0.1.0"
