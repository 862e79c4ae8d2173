"""Clinical indices, pose error metrics and classification scoring.

World axes: x is lateral (frontal plane x-z), y is antero-posterior
(sagittal plane y-z), z is cranial.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .spine import LEVELS, ArticulatedSpine
from .se3 import rotation_angle

_IDX = {lvl: i for i, lvl in enumerate(LEVELS)}


def _span(upper: str, lower: str) -> np.ndarray:
    a, b = sorted((_IDX[upper], _IDX[lower]))
    return np.arange(a, b + 1)


REGIONS = {
    "pt": _span("T1", "T5"),
    "mt": _span("T5", "T12"),
    "l": _span("T12", "L5"),
}
KYPHOSIS_SPAN = _span("T4", "T12")
LORDOSIS_SPAN = _span("L1", "L5")


@dataclass
class ClinicalParameters:
    cobb_pt: float
    cobb_mt: float
    cobb_l: float
    kyphosis_t4_t12: float
    lordosis_l1_l5: float
    pmc_pt: float
    pmc_mt: float
    pmc_l: float
    apex_axial_rotation: float
    frontal_balance: float
    sagittal_balance: float

    @property
    def main_cobb(self) -> float:
        return max(self.cobb_pt, self.cobb_mt, self.cobb_l)

    def as_dict(self) -> dict:
        return asdict(self)


def frontal_tilts(rotations: np.ndarray) -> np.ndarray:
    """Signed frontal-plane angle (deg) of each vertebra's local transverse axis."""
    return np.degrees(np.arctan2(rotations[:, 2, 0], rotations[:, 0, 0]))


def sagittal_tilts(rotations: np.ndarray) -> np.ndarray:
    return np.degrees(np.arctan2(rotations[:, 2, 1], rotations[:, 1, 1]))


def _region_cobb(tilts: np.ndarray, span: np.ndarray) -> tuple[float, int, int]:
    t = tilts[span]
    hi, lo = int(np.argmax(t)), int(np.argmin(t))
    return float(t[hi] - t[lo]), int(span[hi]), int(span[lo])


def _pmc(centers: np.ndarray, i: int, j: int) -> tuple[float, int]:
    """Azimuth (deg from the sagittal axis) of the plane through two end
    vertebrae and the apex, plus the apex index."""
    a, b = sorted((i, j))
    chord = centers[b] - centers[a]
    norm = np.linalg.norm(chord)
    if b - a < 2 or norm == 0:
        return 0.0, a
    u = chord / norm
    rel = centers[a : b + 1] - centers[a]
    perp = rel - np.outer(rel @ u, u)
    dist = np.linalg.norm(perp, axis=1)
    k = int(np.argmax(dist))
    if dist[k] < 1e-9:
        return 0.0, a + k
    off = perp[k]
    return float(np.degrees(np.arctan2(off[0], off[1]))), a + k


def clinical_parameters(spine: ArticulatedSpine) -> ClinicalParameters:
    absolute = spine.absolute()
    rots = np.stack([t.rotation for t in absolute])
    centers = np.stack([t.translation for t in absolute])
    ft = frontal_tilts(rots)
    st = sagittal_tilts(rots)

    cobb, pmc, apex = {}, {}, {}
    for name, span in REGIONS.items():
        c, hi, lo = _region_cobb(ft, span)
        cobb[name] = c
        pmc[name], apex[name] = _pmc(centers, hi, lo)
    main = max(cobb, key=lambda r: cobb[r])
    ar = rots[apex[main]]
    return ClinicalParameters(
        cobb_pt=cobb["pt"],
        cobb_mt=cobb["mt"],
        cobb_l=cobb["l"],
        kyphosis_t4_t12=_region_cobb(st, KYPHOSIS_SPAN)[0],
        lordosis_l1_l5=_region_cobb(st, LORDOSIS_SPAN)[0],
        pmc_pt=pmc["pt"],
        pmc_mt=pmc["mt"],
        pmc_l=pmc["l"],
        apex_axial_rotation=float(np.degrees(np.arctan2(ar[1, 0], ar[0, 0]))),
        frontal_balance=float(centers[-1, 0] - centers[0, 0]),
        sagittal_balance=float(centers[-1, 1] - centers[0, 1]),
    )


def main_cobb_from_rotations(rotations: np.ndarray) -> float:
    ft = frontal_tilts(rotations)
    return max(_region_cobb(ft, span)[0] for span in REGIONS.values())


def main_cobb(spine: ArticulatedSpine) -> float:
    return main_cobb_from_rotations(np.stack([t.rotation for t in spine.absolute()]))


def pose_errors(pred: ArticulatedSpine, truth: ArticulatedSpine) -> tuple[float, float, float, float]:
    """(AE deg, MOD mm, MCD mm, landmark RMS mm) between two spines."""
    if [v.level for v in pred.vertebrae] != [v.level for v in truth.vertebrae]:
        raise ValueError("spines have different vertebral levels")
    pa, ta = pred.absolute(), truth.absolute()
    angles = [np.degrees(rotation_angle(p.rotation.T @ t.rotation)) for p, t in zip(pa, ta)]
    tdiff = [np.linalg.norm(p.translation - t.translation) for p, t in zip(pa, ta)]
    pw, tw = pred.world_landmarks(), truth.world_landmarks()
    mcd = np.linalg.norm(pw.mean(axis=1) - tw.mean(axis=1), axis=1)
    rms = np.sqrt(np.mean(np.sum((pw - tw) ** 2, axis=-1)))
    return float(np.mean(angles)), float(np.max(tdiff)), float(np.mean(mcd)), float(rms)


def landmark_rms(a: ArticulatedSpine, b: ArticulatedSpine) -> float:
    return float(np.sqrt(np.mean(np.sum((a.world_landmarks() - b.world_landmarks()) ** 2, axis=-1))))


@dataclass
class ClassificationReport:
    accuracy: float
    sensitivity: float
    specificity: float
    auc: float
    roc_points: list
    per_fold: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def roc_curve(truths: Sequence[str], scores: Sequence[float], threshold_grid=None) -> list[tuple[float, float]]:
    y = np.asarray([t == "P" for t in truths])
    s = np.asarray(scores, dtype=float)
    grid = np.unique(s) if threshold_grid is None else np.asarray(threshold_grid, dtype=float)
    n_pos, n_neg = y.sum(), (~y).sum()
    pts = {(0.0, 0.0), (1.0, 1.0)}
    for thr in grid:
        pred = s >= thr
        pts.add((float((pred & ~y).sum() / n_neg), float((pred & y).sum() / n_pos)))
    return sorted(pts)


def auc_trapezoid(points) -> float:
    pts = np.asarray(points, dtype=float)
    # within equal fpr keep the tpr ordering so the staircase is monotone
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) * 0.5))


def score_classification(truths: Sequence[str], scores: Sequence[float], threshold_grid=None, threshold: float = 0.5) -> ClassificationReport:
    truths = list(truths)
    if len(truths) != len(scores):
        raise ValueError("truths and scores differ in length")
    if len(set(truths)) < 2:
        raise ValueError("AUC is undefined for a single-class truth set")
    if not set(truths) <= {"P", "NP"}:
        raise ValueError("truth labels must be 'P' or 'NP'")
    y = np.asarray([t == "P" for t in truths])
    pred = np.asarray(scores, dtype=float) >= threshold
    tp, tn = int((pred & y).sum()), int((~pred & ~y).sum())
    fp, fn = int((pred & ~y).sum()), int((~pred & y).sum())
    roc = roc_curve(truths, scores, threshold_grid)
    return ClassificationReport(
        accuracy=100.0 * (tp + tn) / len(truths),
        sensitivity=100.0 * tp / (tp + fn),
        specificity=100.0 * tn / (tn + fp),
        auc=auc_trapezoid(roc),
        roc_points=[list(p) for p in roc],
    )
