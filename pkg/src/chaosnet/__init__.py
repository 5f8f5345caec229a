"""Chaotic dynamical systems as fixed backbones of trainable classifiers."""

__version__ = "0.1.0"
