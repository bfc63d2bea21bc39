"""Adaptive-sampling neural rendering with a cycle-level CIM accelerator model."""

__version__ = "0.1.0"
