"""Stein variational belief propagation for pairwise Markov random fields."""

__version__ = "0.1.0"
