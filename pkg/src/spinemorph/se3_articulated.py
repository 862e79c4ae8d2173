"""Articulated spine representation: SE(3) toolkit, spine model and feature vectors.

This module gathers the public names of ``se3`` and ``spine`` under one import.
"""

from .se3 import (  # noqa: F401
    NearPiRotationWarning,
    hat,
    vee,
    orthonormalize,
    rot_exp,
    rotation_angle,
    rot_log,
    geodesic_rotation_distance,
    quat_from_matrix,
    fix_hemisphere,
    matrix_from_quat,
    rot_x,
    rot_y,
    rot_z,
    RigidTransform,
    compose,
    invert,
    random_rotation,
    random_transform,
)
from .spine import (  # noqa: F401
    N_LEVELS,
    N_LANDMARKS,
    LANDMARK_NAMES,
    MODES,
    LABELS,
    IncompatibleFeaturesError,
    feature_dim,
    has_poses,
    has_shape,
    block_indices,
    VertebraModel,
    ArticulatedSpine,
    to_absolute,
    to_relative,
    FeatureVector,
    to_feature_vector,
    split_features,
    from_feature_vector,
    pairwise_distances,
    articulated_distance,
)

__all__ = [
    "NearPiRotationWarning",
    "hat",
    "vee",
    "orthonormalize",
    "rot_exp",
    "rotation_angle",
    "rot_log",
    "geodesic_rotation_distance",
    "quat_from_matrix",
    "fix_hemisphere",
    "matrix_from_quat",
    "rot_x",
    "rot_y",
    "rot_z",
    "RigidTransform",
    "compose",
    "invert",
    "random_rotation",
    "random_transform",
    "N_LEVELS",
    "N_LANDMARKS",
    "LANDMARK_NAMES",
    "MODES",
    "LABELS",
    "IncompatibleFeaturesError",
    "feature_dim",
    "has_poses",
    "has_shape",
    "block_indices",
    "VertebraModel",
    "ArticulatedSpine",
    "to_absolute",
    "to_relative",
    "FeatureVector",
    "to_feature_vector",
    "split_features",
    "from_feature_vector",
    "pairwise_distances",
    "articulated_distance",
]
