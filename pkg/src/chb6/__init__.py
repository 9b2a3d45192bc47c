"""Spectral solver, adjoint sweep and sparse optimal control for Brinkman flow
coupled to a sixth-order Cahn-Hilliard equation on a periodic box."""

__version__ = "0.1.0"
