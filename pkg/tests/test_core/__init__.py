"""Test measures, encoding and spectral regularization."""
