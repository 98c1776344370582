"""Lattice experiments for conformal loop ensemble probabilities."""
from __future__ import annotations

__version__ = "0.1.0"
