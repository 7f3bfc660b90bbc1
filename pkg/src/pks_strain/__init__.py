"""Chemotaxis (parabolic-elliptic Keller-Segel) with a hyperbolic strain flow.

Modules: ``grid`` (mesh and quadrature), ``kernel`` (regularised Newtonian
potential), ``dynamics`` (time stepping and blow-up proxy), ``diagnostics``
(functionals and inequality checks), ``experiments`` (scenarios, runs,
sweeps) and ``cli``.
"""

__version__ = "0.1.0"
