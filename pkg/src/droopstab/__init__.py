"""Droop-controlled network stability regions: eigenvalue oracle and GAN surrogates."""

__version__ = "0.1.0"
