"""Conformal retrofitting of pretrained embeddings onto Riemannian manifolds."""

__version__ = "0.1.0"
