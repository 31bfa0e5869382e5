"""Generative modelling of quantum pure-state ensembles with an optimal-transport loss."""

__version__ = "0.1.0"
