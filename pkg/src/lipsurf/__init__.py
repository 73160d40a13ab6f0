"""Simulation of Lipschitz surfaces built from Poisson random walks on random conductances."""

__version__ = "0.1.0"
