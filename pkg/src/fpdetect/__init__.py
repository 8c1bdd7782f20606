"""Synthesis-system fingerprint detection: features, models, metrics and a reproducible pipeline."""

__version__ = "0.1.0"
