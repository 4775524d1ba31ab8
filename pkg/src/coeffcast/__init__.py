"""Speech-driven facial coefficient animation over disentangled VQ latent spaces."""

__version__ = "0.1.0"
