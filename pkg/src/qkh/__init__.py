"""Quantum Kramers-Henneberger simulator: quantized trap shaking, gauge chain and effective fields."""
__version__ = "0.1.0"
