"""Parallel-curve transport and spine prediction.

This module gathers the public names of ``transport`` under one import.
"""

from .transport import (  # noqa: F401
    EXTRAPOLATION_FACTOR,
    ExtrapolationError,
    TimeWarp,
    time_warp,
    flexibility_warp,
    SpaceShift,
    space_shift,
    parallel_curve_point,
    clamp_to_domain,
    latent_spacing,
    reconstruct_ambient,
    PredictionResult,
    predict_spine,
    PredictionConfig,
    PatientPrediction,
    predict_patient,
    replace_tau,
)

__all__ = [
    "EXTRAPOLATION_FACTOR",
    "ExtrapolationError",
    "TimeWarp",
    "time_warp",
    "flexibility_warp",
    "SpaceShift",
    "space_shift",
    "parallel_curve_point",
    "clamp_to_domain",
    "latent_spacing",
    "reconstruct_ambient",
    "PredictionResult",
    "predict_spine",
    "PredictionConfig",
    "PatientPrediction",
    "predict_patient",
    "replace_tau",
]
