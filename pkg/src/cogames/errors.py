"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside the range an operation supports."""


class StructureError(ValueError):
    """An input violates a structural precondition (disconnected graph,
    unreachable node, malformed solution, ...)."""


class ShapeError(ValueError):
    """Array dimensions are mutually inconsistent."""


class DecodingError(RuntimeError):
    """An episode reached a state where no action can be taken, or an
    action violated the environment contract."""


class FormatError(ValueError):
    """A serialized artifact (graph file, checkpoint, TSPLIB file, config)
    cannot be parsed."""


class TrainingError(RuntimeError):
    """Training hit a non-recoverable numerical condition."""
