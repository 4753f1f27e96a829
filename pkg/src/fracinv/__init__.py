"""Forward and inverse solvers for coupled nonlocal and time-fractional reaction-diffusion systems."""

__version__ = "0.1.0"
