"""Deterministic compute-hour commodity exchange and simulator."""

from .engine import ENGINE_VERSION, Engine, EngineConfig
from .errors import GcxError

__version__ = ENGINE_VERSION

__all__ = ["ENGINE_VERSION", "Engine", "EngineConfig", "GcxError", "__version__"]
