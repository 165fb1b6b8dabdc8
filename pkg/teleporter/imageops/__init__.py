"""Raster kernels: grayscale, Sobel, erosion, high-frequency maps."""
