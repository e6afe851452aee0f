"""Mutually excited random walks: simulation, regeneration estimators, RWRE bounds and truncated chains."""

__version__ = "0.1.0"
