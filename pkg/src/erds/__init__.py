"""Entropy-production diagnostics for reaction-diffusion systems with energy."""

__version__ = "0.1.0"
