"""Cumulative continuous-time Markov chains over item sets."""

__version__ = "0.1.0"
