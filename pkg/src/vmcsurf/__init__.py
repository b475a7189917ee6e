"""Desk-scale variational Monte Carlo across molecular geometry families,
with a jointly trained invariant energy-surface surrogate for
millisecond potential-energy queries."""

__version__ = "0.1.0"
