"""Derived-from-Anosov diffeomorphisms on T^3: construction, certification
and Gibbs u-state experiments."""

__version__ = "0.1.0"
