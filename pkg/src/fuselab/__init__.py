"""Desk-scale transducer speech recognition lab with LM-fusion training."""

__version__ = "0.1.0"
