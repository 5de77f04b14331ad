"""Residual-stream perturbation experiments on SAE-composed activations."""

__version__ = "0.1.0"
