"""Numerical certification of singular extremals in minimum-time problems.

Subpackages cover system backends (matrix groups and coordinate charts),
extremal integration and necessary conditions, singular-surface geometry
with the dominating Hamiltonian certificate, second-variation coercivity
tests, an empirical falsifier, and a small CLI.
"""

__version__ = "0.1.0"
