"""Interpreting audio classifiers through time activations of a pre-learnt NMF dictionary."""

__version__ = "0.1.0"
