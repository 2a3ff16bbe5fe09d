"""Exact level-based particle simulation of branching processes."""
from .errors import ConfigError, LevelSimError, SimulationOverflow, StateError, UnsupportedError
from .levels import LevelDomainError, LevelParams, OffspringRates

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "LevelDomainError",
    "LevelParams",
    "LevelSimError",
    "OffspringRates",
    "SimulationOverflow",
    "StateError",
    "UnsupportedError",
]
