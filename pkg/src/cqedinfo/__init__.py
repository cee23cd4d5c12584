"""Information rates of a homodyne-monitored, strongly driven atom-cavity system."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ConvergenceError,
    DomainError,
    InvalidUpdate,
    StabilityError,
    TruncationError,
)
from .hilbert import DensityMatrix, FockSpec, Operator, PureState  # noqa: E402
from .dynamics import SystemParams, TrajectoryRecord  # noqa: E402

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DensityMatrix",
    "DomainError",
    "FockSpec",
    "InvalidUpdate",
    "Operator",
    "PureState",
    "StabilityError",
    "SystemParams",
    "TrajectoryRecord",
    "TruncationError",
]
