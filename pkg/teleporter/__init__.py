"""Teleporter: place a target object into a scene with a conditioned latent diffusion model."""

__version__ = "0.1.0"
