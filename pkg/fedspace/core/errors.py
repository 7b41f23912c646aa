"""Exception hierarchy for fedspace.

Each error also derives from the builtin it refines, so callers that catch
``ValueError`` or ``RuntimeError`` keep working.
"""


class FedSpaceError(Exception):
    """Base class for all fedspace errors."""


class ConfigError(FedSpaceError, ValueError):
    """Invalid configuration value or incompatible option combination."""


class ConstraintViolationError(FedSpaceError, ValueError):
    """A generation constraint (minimum size, minimum stage length) cannot be met."""


class CapacityError(FedSpaceError, ValueError):
    """More samples were requested than the dataset holds."""


class RoundRangeError(FedSpaceError, IndexError):
    """Round index outside ``[1, total_rounds]``."""


class SchemaError(FedSpaceError, ValueError):
    """A file on disk has the wrong version or is corrupt."""


class DimensionError(FedSpaceError, ValueError):
    """Tensor or head shapes do not line up."""


class SamplingError(FedSpaceError, RuntimeError):
    """IFS code sampling failed (degenerate map or rejection budget exhausted)."""


class DivergenceError(FedSpaceError, RuntimeError):
    """Chaos-game orbit left the finite numeric range."""


class NumericError(FedSpaceError, ArithmeticError):
    """Non-finite loss or gradient.

    Attributes:
        tensor_name: Name of the offending tensor or loss term, if known
    """

    def __init__(self, message: str, tensor_name: str | None = None) -> None:
        super().__init__(message)
        self.tensor_name = tensor_name


class ClientRoundError(NumericError):
    """A client's local round failed; the whole round is aborted.

    Attributes:
        client_id: Failing client
        round_index: Round in which it failed
    """

    def __init__(
        self,
        message: str,
        client_id: int,
        round_index: int,
        tensor_name: str | None = None,
    ) -> None:
        super().__init__(f"client {client_id}, round {round_index}: {message}", tensor_name)
        self.client_id = client_id
        self.round_index = round_index
