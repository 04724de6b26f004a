"""Adaptive space-time finite elements for non-stationary convection-
diffusion equations with a Lipschitz source non-linearity, including a
residual-based a posteriori error estimator with parameter-explicit
weights, energy-dual auxiliary problems, and space/time adaptivity."""

__version__ = "0.1.0"
