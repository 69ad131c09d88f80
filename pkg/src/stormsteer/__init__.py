"""Trajectory-steering adversarial perturbations against a vortex tracker."""

__version__ = "0.1.0"
