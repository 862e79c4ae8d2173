"""Training helpers and patient-level k-fold evaluation.

Classification models are trained on the baseline visit of every training
patient, since progression labels belong to patients rather than visits.
Prediction models are trained on all visits, because the regression needs
the neighbours' longitudinal latent trajectories.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cohort import Cohort, Patient
from .dpllvm import Hyperparams, TrainedManifold, classify, embed_out_of_sample, fit
from .graphs import build_graphs
from .metrics import ClassificationReport, landmark_rms, main_cobb, pose_errors, score_classification
from .projection import KernelConfig, nw_project_details
from .spine import FeatureVector, from_feature_vector, to_feature_vector
from .transport import PredictionConfig, predict_patient, reconstruct_ambient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "shape_poses"
    latent_dim: int = 8
    k: int = 10
    omega_w: float = 0.3
    omega_b: float = 0.7
    sigma: float = 1.0
    max_iters: int = 200
    elbo_rel_tol: float = 1e-6
    k_neighbors: int = 10
    k_d: int = 25
    lam: float = 0.1
    mu: float = 1.0
    tau: float = 0.0
    predict: bool = True
    seed: int = 0

    def hyper(self) -> Hyperparams:
        return Hyperparams(self.sigma, self.omega_w, self.omega_b, self.latent_dim, self.max_iters, self.elbo_rel_tol)

    def prediction(self) -> PredictionConfig:
        return PredictionConfig(self.k_neighbors, self.k_d, self.lam, self.mu, tau=self.tau)


def patient_features(patients: Sequence[Patient], mode: str, visits: str = "all") -> list[FeatureVector]:
    if visits not in ("all", "baseline"):
        raise ValueError("visits must be 'all' or 'baseline'")
    out = []
    for p in patients:
        chosen = p.visits if visits == "all" else p.visits[:1]
        for t, spine in chosen:
            out.append(to_feature_vector(spine, mode, label=p.true_label, patient_id=p.patient_id, visit_time=t))
    return out


def train_manifold(patients: Sequence[Patient], cfg: PipelineConfig, visits: str = "all") -> TrainedManifold:
    """Fit the latent model on the given patients and attach their flexibility ratios."""
    feats = patient_features(patients, cfg.mode, visits)
    graphs = build_graphs(feats, cfg.k)
    m = fit(feats, cfg.hyper(), graphs)
    m = replace(m, flexibility={p.patient_id: float(p.flexibility_ratio) for p in patients})
    return m.with_diagnostics(visits=visits, self_reconstruction_rms=self_reconstruction_rms(m, cfg.k_neighbors))


def self_reconstruction_rms(m: TrainedManifold, k_neighbors: int = 10) -> float:
    """Median landmark RMS of the leave-patient-out round trip of every baseline.

    Each baseline is projected with its own patient's anchors excluded and
    reconstructed from the remaining anchors, so the value measures how well
    the model represents a spine it has not memorised.
    """
    pids = np.array([a.patient_id for a in m.anchors])
    errs = []
    for i, a in enumerate(m.anchors):
        if a.visit_time != 0.0 or a.mode not in ("poses", "shape_poses", "shape"):
            continue
        excl = pids == a.patient_id
        if (~excl).sum() < k_neighbors:
            continue
        proj = nw_project_details(m, a, KernelConfig(k_neighbors=k_neighbors), exclude=excl)
        fv = reconstruct_ambient(m, proj.x, check_extrapolation=False, exclude=excl)
        template = _template_for(a)
        errs.append(landmark_rms(from_feature_vector(fv, template), from_feature_vector(a, template)))
    return float(np.median(errs)) if errs else float("nan")


def _template_for(fv: FeatureVector):
    """Shape-only or pose-only features need the missing block from somewhere; use a neutral spine."""
    if fv.mode == "shape_poses":
        return None
    from .cohort import neutral_spine

    return neutral_spine()


def patient_folds(cohort: Cohort, k_folds: int, seed: int = 0) -> list[list[str]]:
    """Seeded partition of patients into k folds, stratified by label.

    Patients of each class are shuffled and dealt round-robin, so every fold
    holds both classes and every patient appears in exactly one fold.
    """
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    rng = np.random.default_rng(seed)
    folds: list[list[str]] = [[] for _ in range(k_folds)]
    offset = 0
    for label in ("P", "NP"):
        ids = [p.patient_id for p in cohort.patients if p.true_label == label]
        if 0 < len(ids) < k_folds:
            raise ValueError(f"class {label} has {len(ids)} patients, fewer than k_folds={k_folds}")
        ids = [ids[i] for i in rng.permutation(len(ids))]
        for j, pid in enumerate(ids):
            folds[(j + offset) % k_folds].append(pid)
        offset += len(ids)
    if any(not f for f in folds):
        raise ValueError("cohort is too small for the requested number of folds")
    return folds


@dataclass
class PredictionRecord:
    patient_id: str
    fold: int
    month: float
    cobb_true: float
    cobb_pred: float
    ae_deg: float
    mod_mm: float
    mcd_mm: float
    landmark_rms_mm: float
    baseline_rms_mm: float

    @property
    def cobb_error(self) -> float:
        return self.cobb_pred - self.cobb_true


@dataclass
class EvaluationResult:
    report: ClassificationReport
    truths: list
    scores: list
    predictions: list = field(default_factory=list)
    self_reconstruction: list = field(default_factory=list)
    runtime_s: float = 0.0

    def prediction_summary(self) -> dict:
        """Mean and standard deviation of each error, per follow-up year."""
        out = {}
        if not self.predictions:
            return out
        months = np.array([r.month for r in self.predictions])
        bins = np.rint(months / 12.0) * 12.0
        for b in sorted(set(bins.tolist())):
            rows = [r for r, bb in zip(self.predictions, bins) if bb == b]
            entry = {"n": len(rows)}
            for name in ("cobb_error", "ae_deg", "mod_mm", "mcd_mm", "landmark_rms_mm"):
                v = np.array([abs(getattr(r, name)) if name == "cobb_error" else getattr(r, name) for r in rows])
                entry[name] = (float(v.mean()), float(v.std()))
            entry["cobb_within_5deg"] = float(np.mean([abs(r.cobb_error) <= 5.0 for r in rows]))
            out[f"{int(b)}"] = entry
        return out

    def as_dict(self) -> dict:
        return {
            "classification": self.report.as_dict(),
            "scores": [{"truth": t, "score": s} for t, s in zip(self.truths, self.scores)],
            "prediction_summary": self.prediction_summary(),
            "predictions": [asdict(r) for r in self.predictions],
            "self_reconstruction_rms": self.self_reconstruction,
        }


def classify_baseline(m: TrainedManifold, spine) -> tuple[str, float, np.ndarray]:
    x, _ = embed_out_of_sample(m, to_feature_vector(spine, m.mode))
    label, score = classify(m, x)
    return label, score, x


def predict_heldout(m: TrainedManifold, patient: Patient, cfg: PipelineConfig, fold: int = 0) -> list[PredictionRecord]:
    """Predict every follow-up visit of a held-out patient from its baseline."""
    months = [t for t, _ in patient.visits[1:]]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pp = predict_patient(m, patient.baseline, patient.flexibility_ratio, [0.0] + months, cfg.prediction(),
                             check_extrapolation=False)
    res = pp.result
    base_rms = landmark_rms(res.spines[0], patient.baseline)
    rows = []
    for (t, truth), spine in zip(patient.visits[1:], res.spines[1:]):
        ae, mod, mcd, rms = pose_errors(spine, truth)
        rows.append(PredictionRecord(patient.patient_id, fold, float(t), main_cobb(truth), main_cobb(spine), ae, mod, mcd,
                                     rms, base_rms))
    return rows


def kfold_evaluate(cohort: Cohort, cfg: PipelineConfig = PipelineConfig(), k_folds: int = 9) -> EvaluationResult:
    """Patient-level k-fold classification and, optionally, prediction errors.

    Each fold trains a baseline classifier on the other folds and scores its
    held-out baselines. With ``cfg.predict`` a second model is trained on
    all visits of the training patients and used to predict the held-out
    progressive patients' follow-up visits.
    """
    start = time.perf_counter()
    folds = patient_folds(cohort, k_folds, cfg.seed)
    truths, scores, fold_rows, preds, recon = [], [], [], [], []
    for f, held in enumerate(folds):
        held_set = set(held)
        train = [p for p in cohort.patients if p.patient_id not in held_set]
        test = [cohort.by_id(pid) for pid in held]
        m = train_manifold(train, cfg, visits="baseline")
        t_f, s_f = [], []
        for p in test:
            _, score, _ = classify_baseline(m, p.baseline)
            t_f.append(p.true_label)
            s_f.append(score)
        truths += t_f
        scores += s_f
        acc = 100.0 * np.mean([(s >= 0.5) == (t == "P") for t, s in zip(t_f, s_f)])
        fold_rows.append({"fold": f, "n": len(test), "accuracy": float(acc), "elbo_iterations": len(m.elbo_trace)})
        if cfg.predict:
            mp = train_manifold(train, cfg, visits="all")
            recon.append(mp.diagnostics["self_reconstruction_rms"])
            for p in test:
                if p.true_label == "P" and len(p.visits) > 1:
                    preds += predict_heldout(mp, p, cfg, f)
        log.info("fold %d/%d done (accuracy %.1f%%)", f + 1, k_folds, acc)
    report = score_classification(truths, scores)
    report.per_fold = fold_rows
    return EvaluationResult(report, truths, scores, preds, recon, time.perf_counter() - start)
