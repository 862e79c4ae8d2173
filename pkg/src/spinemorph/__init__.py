"""Discriminant latent manifolds of articulated spines and prediction of their progression."""

__version__ = "0.1.0"
