"""Quantum state diffusion for the driven, damped double-well Duffing oscillator."""

__version__ = "0.1.0"
