"""Bayesian-optimization solvers for Nash equilibria of potential games with bandit feedback."""

__version__ = "0.1.0"
