"""Noise schedule, conditioned denoiser, training and sampling."""
