"""Synthetic longitudinal cohorts with known progression labels.

This module gathers the public names of ``cohort`` under one import.
"""

from .cohort import (  # noqa: F401
    PROGRESSION_THRESHOLD_DEG,
    DEFORMITY_CLASSES,
    ConfigError,
    CohortConfig,
    Patient,
    Cohort,
    generate_cohort,
    label_progression,
    neutral_spine,
)

__all__ = [
    "PROGRESSION_THRESHOLD_DEG",
    "DEFORMITY_CLASSES",
    "ConfigError",
    "CohortConfig",
    "Patient",
    "Cohort",
    "generate_cohort",
    "label_progression",
    "neutral_spine",
]
