"""Monocular 3D pose estimation with an explicit 2D latent, on a numpy autodiff core."""

__version__ = "0.1.0"
