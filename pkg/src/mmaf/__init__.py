"""Simulation of the modified massive Arratia flow by its coalescing map
construction, with Monte Carlo checks of its occupation-functional CLT,
gap/mixing estimates and small-time variance."""

__version__ = "0.1.0"
