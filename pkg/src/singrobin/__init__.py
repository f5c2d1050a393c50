"""Positive solutions of Robin problems with measure data and singular boundary nonlinearities."""

__version__ = "0.1.0"
