"""Monte Carlo laboratory for branching random walks in the boundary case."""

__version__ = "0.1.0"
