"""Monocular SLAM backend with a Gaussian-splatting map and synthetic-world driver."""

__version__ = "0.1.0"
