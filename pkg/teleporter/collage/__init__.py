"""Collage construction and shape-mask simulation."""
