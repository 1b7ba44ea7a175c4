"""Simulation, inference and evaluation toolkit for the social sampling model."""

from .backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
