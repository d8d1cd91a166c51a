"""Game-theoretic co-evolution of policies and environment levels."""

from __future__ import annotations

from .errors import CoevoError

__version__ = "0.1.0"

__all__ = ["CoevoError", "__version__"]
