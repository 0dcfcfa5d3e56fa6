"""Drift-constrained fine-tuning of embedding encoders at desk scale."""

__version__ = "0.1.0"
