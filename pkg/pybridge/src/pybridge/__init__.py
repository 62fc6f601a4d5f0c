"""RL-protocol bridge over the tsclab traffic signal environment."""
from .core import (
    Box,
    BridgedEnv,
    BridgeError,
    ClosedHandle,
    ConfigMismatch,
    Discrete,
    ForeignThread,
    ParallelBridgedEnv,
    load_config,
    make,
    parallel_make,
)

__version__ = "0.1.0"

__all__ = [
    "Box",
    "BridgedEnv",
    "BridgeError",
    "ClosedHandle",
    "ConfigMismatch",
    "Discrete",
    "ForeignThread",
    "ParallelBridgedEnv",
    "load_config",
    "make",
    "parallel_make",
    "__version__",
]
