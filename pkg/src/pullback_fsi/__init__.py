"""Galerkin numerics for a viscous fluid coupled to a clamped plate with
time-dependent coefficients, and pullback-attractor experiments on top."""

__version__ = "0.1.0"
