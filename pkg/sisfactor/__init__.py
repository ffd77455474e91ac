"""Generalized infinite factor models with structured increasing shrinkage priors."""

__version__ = "0.1.0"
