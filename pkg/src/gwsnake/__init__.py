"""Simulation and verification lab for branching random walks on
size-conditioned Galton-Watson trees: exact conditioned sampling,
path encodings, ancestor-type fields, an exact-rational enumeration
oracle, and replicated Monte Carlo checks of the limit laws."""

__version__ = "0.1.0"
