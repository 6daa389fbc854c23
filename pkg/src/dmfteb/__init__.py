"""Empirical-Bayes Langevin dynamics toolkit for high-dimensional linear regression.

Subpackages cover the parametric prior families, the scalar observation
channel, replica-symmetric equilibrium solvers, the dynamical mean-field
solver with its Gaussian closed-form oracle, finite-size simulation, and a
command-line harness.
"""

__version__ = "0.1.0"
