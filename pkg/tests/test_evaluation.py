import numpy as np
import pytest

from spinemorph.evaluation import (
    PipelineConfig,
    classify_baseline,
    kfold_evaluate,
    patient_features,
    patient_folds,
    train_manifold,
)
from spinemorph.plotting import cobb_trajectories_figure, error_bar_figure, latent_figure, prediction_figure, roc_figure

QUICK = PipelineConfig(latent_dim=2, k=5, max_iters=40, k_neighbors=5, k_d=9)


def test_folds_partition_patients_and_keep_both_classes(small_cohort):
    folds = patient_folds(small_cohort, 3, seed=4)
    ids = [pid for f in folds for pid in f]
    assert sorted(ids) == sorted(p.patient_id for p in small_cohort.patients)
    for f in folds:
        labels = {small_cohort.by_id(pid).true_label for pid in f}
        assert labels == {"P", "NP"}
    assert patient_folds(small_cohort, 3, seed=4) == folds
    with pytest.raises(ValueError):
        patient_folds(small_cohort, 1)
    with pytest.raises(ValueError):
        patient_folds(small_cohort, 100)


def test_patient_features_visit_selection(small_cohort):
    pts = small_cohort.patients[:4]
    assert len(patient_features(pts, "shape", "baseline")) == 4
    allv = patient_features(pts, "shape", "all")
    assert len(allv) == sum(len(p.visits) for p in pts)
    assert {f.visit_time for f in allv} >= {0.0}
    with pytest.raises(ValueError):
        patient_features(pts, "shape", "first")


def test_classify_baseline_returns_a_probability(small_cohort):
    m = train_manifold(small_cohort.patients, QUICK, visits="baseline")
    assert m.flexibility == {p.patient_id: p.flexibility_ratio for p in small_cohort.patients}
    assert np.isfinite(m.diagnostics["self_reconstruction_rms"])
    label, score, x = classify_baseline(m, small_cohort.patients[0].baseline)
    assert label in ("P", "NP") and 0.0 <= score <= 1.0 and x.shape == (2,)


@pytest.fixture(scope="module")
def evaluation(small_cohort):
    return kfold_evaluate(small_cohort, QUICK, k_folds=3)


def test_kfold_evaluation_scores_every_patient_once(evaluation, small_cohort):
    assert len(evaluation.scores) == small_cohort.config.n_patients
    assert sum(r["n"] for r in evaluation.report.per_fold) == small_cohort.config.n_patients
    assert 0.0 <= evaluation.report.auc <= 1.0
    n_follow = sum(len(p.visits) - 1 for p in small_cohort.patients if p.true_label == "P")
    assert len(evaluation.predictions) == n_follow
    assert len(evaluation.self_reconstruction) == 3
    summary = evaluation.prediction_summary()
    assert sum(v["n"] for v in summary.values()) == n_follow
    doc = evaluation.as_dict()
    assert set(doc) == {"classification", "scores", "prediction_summary", "predictions", "self_reconstruction_rms"}


def test_kfold_evaluation_is_deterministic(evaluation, small_cohort):
    again = kfold_evaluate(small_cohort, QUICK, k_folds=3)
    assert again.scores == evaluation.scores
    assert [r.cobb_pred for r in again.predictions] == [r.cobb_pred for r in evaluation.predictions]


def test_figures_are_byte_identical_svg(tmp_path):
    paths = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        paths.append([
            roc_figure([[0, 0], [0.2, 0.7], [1, 1]], d / "roc.svg", auc=0.8),
            error_bar_figure({"12 mo": (2.0, 0.5), "24 mo": (3.0, 1.0)}, d / "err.svg", "deg"),
            cobb_trajectories_figure([("P", [0, 12], [20, 28]), ("NP", [0, 12], [15, 16])], d / "traj.svg"),
            prediction_figure([0, 12, 24], [20, 24, 29], d / "pred.svg", truth=([0, 12], [20, 25]), title="p001"),
            latent_figure(np.array([[0, 0], [1, 1], [2, 0]]), ["P", "NP", "P"], d / "lat.svg", query=[1, 0],
                          trace=[[0, 0], [1, 0]]),
        ])
    for a, b in zip(*paths):
        text = a.read_text()
        assert text.startswith("<?xml") and "<svg" in text
        assert a.read_bytes() == b.read_bytes()
