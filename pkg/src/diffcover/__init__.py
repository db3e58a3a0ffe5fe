"""Stochastic flows on noncompact spaces: simulation, exit-time tails, chart covers,
boundary behaviour of semigroups and radial models on rotationally symmetric manifolds."""

__version__ = "0.1.0"
