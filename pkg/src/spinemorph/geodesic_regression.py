"""Discrete curve regression of latent trajectories.

This module gathers the public names of ``regression`` under one import.
"""

from .regression import (  # noqa: F401
    DEFAULT_NODES,
    DEFAULT_LAMBDA,
    DEFAULT_MU,
    DEFAULT_HORIZON,
    DomainError,
    TrajectoryBundle,
    DiscreteCurve,
    EmptyBundleError,
    build_bundle,
    uniform_times,
    interpolation_matrix,
    difference_operators,
    energy,
    energy_gradient,
    direct_solve,
    initial_nodes,
    fit_curve,
    evaluate_curve,
    velocity,
)

__all__ = [
    "DEFAULT_NODES",
    "DEFAULT_LAMBDA",
    "DEFAULT_MU",
    "DEFAULT_HORIZON",
    "DomainError",
    "TrajectoryBundle",
    "DiscreteCurve",
    "EmptyBundleError",
    "build_bundle",
    "uniform_times",
    "interpolation_matrix",
    "difference_operators",
    "energy",
    "energy_gradient",
    "direct_solve",
    "initial_nodes",
    "fit_curve",
    "evaluate_curve",
    "velocity",
]
