"""Clinical measurements, error metrics and k-fold evaluation.

This module gathers the public names of ``metrics`` and ``evaluation`` under one import.
"""

from .metrics import (  # noqa: F401
    REGIONS,
    KYPHOSIS_SPAN,
    LORDOSIS_SPAN,
    ClinicalParameters,
    frontal_tilts,
    sagittal_tilts,
    clinical_parameters,
    main_cobb_from_rotations,
    main_cobb,
    pose_errors,
    landmark_rms,
    ClassificationReport,
    roc_curve,
    auc_trapezoid,
    score_classification,
)
from .evaluation import (  # noqa: F401
    PipelineConfig,
    patient_features,
    train_manifold,
    self_reconstruction_rms,
    patient_folds,
    PredictionRecord,
    EvaluationResult,
    classify_baseline,
    predict_heldout,
    kfold_evaluate,
)

__all__ = [
    "REGIONS",
    "KYPHOSIS_SPAN",
    "LORDOSIS_SPAN",
    "ClinicalParameters",
    "frontal_tilts",
    "sagittal_tilts",
    "clinical_parameters",
    "main_cobb_from_rotations",
    "main_cobb",
    "pose_errors",
    "landmark_rms",
    "ClassificationReport",
    "roc_curve",
    "auc_trapezoid",
    "score_classification",
    "PipelineConfig",
    "patient_features",
    "train_manifold",
    "self_reconstruction_rms",
    "patient_folds",
    "PredictionRecord",
    "EvaluationResult",
    "classify_baseline",
    "predict_heldout",
    "kfold_evaluate",
]
