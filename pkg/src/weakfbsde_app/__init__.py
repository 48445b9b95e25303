"""Numerical laboratory for forward-backward SDEs in weak formulation."""

from __future__ import annotations

__version__ = "0.1.0"
