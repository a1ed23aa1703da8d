"""Simulation lab for the focusing L2-critical (stochastic) NLS.

Subpackages cover the numerical substrate (grids and spectral operators),
ground states, exact blow-up and soliton families, Wiener noise with the
phase gauge, split-step time integration, and the diagnostic functionals
used to verify the qualitative blow-up theory at desk scale.
"""

__version__ = "0.1.0"
