"""Unfolded graph neural network built on sampled subgraph energies."""

__version__ = "0.1.0"
