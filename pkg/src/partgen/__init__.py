"""Part-aware latent diffusion for labeled point clouds plus the
generative data augmentation (GDA) pipeline built on top of it."""

__version__ = "0.1.0"
