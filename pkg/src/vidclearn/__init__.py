"""Continual learning for text-conditioned video diffusion at desk scale."""

__version__ = "0.1.0"
