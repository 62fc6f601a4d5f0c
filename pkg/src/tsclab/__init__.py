"""Traffic signal control laboratory: microsimulation, control bus, RL tooling."""

__version__ = "0.1.0"

from .scenario import build_preset, load_scenario, resolve_scenario, validate_network
from .engine import init_sim, metrics_snapshot

__all__ = [
    "__version__",
    "build_preset",
    "load_scenario",
    "resolve_scenario",
    "validate_network",
    "init_sim",
    "metrics_snapshot",
]
