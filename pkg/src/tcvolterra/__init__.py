"""Numerical toolkit for stochastic Volterra games driven by time-changed Levy noise."""

__version__ = "0.1.0"
