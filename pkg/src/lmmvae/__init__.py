"""LMM-VAE: variational autoencoders with linear-mixed-model latent priors."""

__version__ = "0.1.0"
