"""Category-level priors for hash-grid neural fields and an online object mapper."""

__version__ = "0.1.0"
