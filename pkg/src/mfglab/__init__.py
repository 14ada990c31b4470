"""Numerical laboratory for first-order mean field games.

Computes symmetric N-player equilibria in distributed open-loop strategies and
the limit mean-field equilibrium, and measures how the former approach the
latter as N grows.
"""

__version__ = "0.1.0"
