"""fedspace - Asynchronous federated continual learning simulator."""

__version__ = "0.1.0"
__license__ = "Apache-2.0"

from fedspace.core.config import SimConfig
from fedspace.core.errors import FedSpaceError

__all__ = [
    "__version__",
    "__license__",
    "SimConfig",
    "FedSpaceError",
]
