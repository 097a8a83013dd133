"""Exception hierarchy.

Every error carries a ``category`` used by the command-line front end as a
machine-greppable prefix (``PARSE``, ``SHAPE``, ``IO``, ``CAPACITY``, ``RUN``).
"""


class CnnFlowError(Exception):
    category = "RUN"


class ShapeError(CnnFlowError, ValueError):
    category = "SHAPE"


class BoundsError(CnnFlowError, IndexError):
    category = "SHAPE"


class GraphError(CnnFlowError, ValueError):
    category = "PARSE"


class ManifestParseError(GraphError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(GraphError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer!r}: {message}"
        super().__init__(message)


class WeightFileError(CnnFlowError):
    category = "IO"


class HeaderError(WeightFileError):
    pass


class TruncatedError(WeightFileError):
    pass


class DimensionError(WeightFileError):
    def __init__(self, message, layer=None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer!r}: {message}"
        super().__init__(message)


class CapacityError(CnnFlowError):
    category = "CAPACITY"


class PipelineError(CnnFlowError, RuntimeError):
    """A stage worker failed; the original exception is chained."""

    category = "RUN"
