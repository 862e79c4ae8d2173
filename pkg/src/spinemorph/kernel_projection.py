"""Kernel projection of ambient spines into the latent space.

This module gathers the public names of ``projection`` under one import.
"""

from .projection import (  # noqa: F401
    MAX_REFINEMENTS,
    MOVE_TOL,
    BandwidthError,
    KernelConfig,
    Projection,
    gaussian,
    saturating_distance,
    objective,
    candidate_anchors,
    ambient_distances,
    nw_project_details,
    nw_project,
)

__all__ = [
    "MAX_REFINEMENTS",
    "MOVE_TOL",
    "BandwidthError",
    "KernelConfig",
    "Projection",
    "gaussian",
    "saturating_distance",
    "objective",
    "candidate_anchors",
    "ambient_distances",
    "nw_project_details",
    "nw_project",
]
