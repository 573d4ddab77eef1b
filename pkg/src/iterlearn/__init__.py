"""Iterated learning of miniature gridworld languages with seq2seq agents."""

__version__ = "0.1.0"
