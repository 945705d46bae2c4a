"""Gaussian-process inverse dynamics and feedback-linearization tracking control."""

__version__ = "0.1.0"
