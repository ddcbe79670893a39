"""Invariant manifolds of perturbed linear cocycles via Lyapunov-Perron iteration."""

__version__ = "0.1.0"
