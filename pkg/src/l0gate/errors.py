"""Exception taxonomy shared across the package."""


class L0GateError(Exception):
    """Base class for all package errors."""


class ShapeError(L0GateError):
    """Tensor shape disagreement; the message names both shapes."""


class NumericError(L0GateError):
    """NaN or Inf encountered where finite values are required."""


class DataError(L0GateError):
    """Malformed or inconsistent dataset input."""


class ConfigError(L0GateError):
    """Invalid run configuration or command-line usage."""


class LayerStateError(L0GateError):
    """Layer API called out of order (e.g. backward before forward)."""


class TrainingDiverged(L0GateError):
    """Training aborted on a non-finite loss or gradient.

    Carries the partial run manifest collected up to the failing step so
    callers can persist what happened before the blow-up.
    """

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest
