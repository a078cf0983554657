"""Sparse Distributed Memory MLPs for continual learning."""
__version__ = "0.1.0"
