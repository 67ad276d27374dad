"""Seedable UAV rescue offloading simulator with Lyapunov control, Hungarian
subarea assignment and a diffusion-actor multi-agent trainer."""

__version__ = "0.1.0"
