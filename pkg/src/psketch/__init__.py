"""Sparse lp oblivious subspace embeddings for 1 <= p < 2."""

__version__ = "0.1.0"
