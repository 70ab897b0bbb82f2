"""工具模块"""

from .logger import get_logger, setup_logging
from .exceptions import (
    ConfigError,
    ContactError,
    ConvergenceError,
    MeshError,
    ModelError,
    NegativeDensityError,
    SingularSystemError,
    SpinDriftError,
)

__all__ = [
    "get_logger",
    "setup_logging",
    "SpinDriftError",
    "MeshError",
    "ModelError",
    "SingularSystemError",
    "ConvergenceError",
    "NegativeDensityError",
    "ContactError",
    "ConfigError",
]
