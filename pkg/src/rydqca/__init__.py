"""Simulation and steering of Rydberg quantum cellular automata."""

from .model import Lattice, RuleSet

__all__ = ["Lattice", "RuleSet"]
__version__ = "0.1.0"
