"""Solver for the one-aggregator, many-consumer demand-response Stackelberg game."""

__version__ = "0.1.0"
