"""Articulated spine models, their feature-vector flattening and the
articulated deviation metric.

Vertebrae are stored in chain order, L5 first and T1 last. Relative transform
k maps vertebra k into the frame of vertebra k-1; the first one anchors L5 to
the world frame. Absolute poses are recursive compositions of the relative
ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .se3 import RigidTransform, compose, invert, quat_from_matrix

LEVELS: tuple[str, ...] = ("L5", "L4", "L3", "L2", "L1") + tuple(f"T{i}" for i in range(12, 0, -1))
N_LEVELS = len(LEVELS)
N_LANDMARKS = 6
LANDMARK_NAMES = (
    "pedicle_left_sup",
    "pedicle_left_inf",
    "pedicle_right_sup",
    "pedicle_right_inf",
    "endplate_sup_center",
    "endplate_inf_center",
)

MODES = ("shape", "poses", "shape_poses")
LABELS = ("P", "NP", "unknown")

_BLOCK = {"shape": 18, "poses": 7, "shape_poses": 25}


class IncompatibleFeaturesError(ValueError):
    pass


def feature_dim(mode: str) -> int:
    return N_LEVELS * _BLOCK[_check_mode(mode)]


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown feature mode {mode!r}; expected one of {MODES}")
    return mode


def has_poses(mode: str) -> bool:
    return mode in ("poses", "shape_poses")


def has_shape(mode: str) -> bool:
    return mode in ("shape", "shape_poses")


def block_indices(mode: str) -> dict[str, np.ndarray]:
    """Column indices of each block, shaped (17, 4), (17, 3), (17, 18)."""
    w = _BLOCK[_check_mode(mode)]
    base = np.arange(N_LEVELS)[:, None] * w
    out = {}
    off = 0
    if has_poses(mode):
        out["quat"] = base + np.arange(4)
        out["trans"] = base + 4 + np.arange(3)
        off = 7
    if has_shape(mode):
        out["landmarks"] = base + off + np.arange(18)
    return out


@dataclass(frozen=True, eq=False)
class VertebraModel:
    level: str
    landmarks: np.ndarray

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown vertebral level {self.level!r}")
        lm = np.array(self.landmarks, dtype=float).reshape(N_LANDMARKS, 3)
        if np.abs(lm.mean(axis=0)).max() > 1e-6:
            raise ValueError(f"{self.level}: landmark centroid must be at the local origin")
        lm.setflags(write=False)
        object.__setattr__(self, "landmarks", lm)

    @classmethod
    def centered(cls, level: str, landmarks) -> "VertebraModel":
        lm = np.asarray(landmarks, dtype=float).reshape(N_LANDMARKS, 3)
        return cls(level, lm - lm.mean(axis=0))


@dataclass(frozen=True, eq=False)
class ArticulatedSpine:
    vertebrae: tuple
    relative_transforms: tuple

    def __post_init__(self):
        verts = tuple(self.vertebrae)
        rel = tuple(self.relative_transforms)
        if len(verts) != N_LEVELS or len(rel) != N_LEVELS:
            raise ValueError(f"a spine needs exactly {N_LEVELS} vertebrae and transforms")
        if tuple(v.level for v in verts) != LEVELS:
            raise ValueError("vertebrae must be ordered L5..T1")
        object.__setattr__(self, "vertebrae", verts)
        object.__setattr__(self, "relative_transforms", rel)

    @classmethod
    def from_absolute(cls, absolute: Sequence[RigidTransform], vertebrae) -> "ArticulatedSpine":
        return cls(tuple(vertebrae), tuple(to_relative(absolute)))

    def absolute(self) -> list[RigidTransform]:
        return to_absolute(self)

    def landmarks(self) -> np.ndarray:
        return np.stack([v.landmarks for v in self.vertebrae])

    def world_landmarks(self) -> np.ndarray:
        """(17, 6, 3) landmarks in the world frame."""
        return np.stack([a.apply(v.landmarks) for a, v in zip(self.absolute(), self.vertebrae)])

    def centers(self) -> np.ndarray:
        return np.stack([a.translation for a in self.absolute()])


def to_absolute(spine: ArticulatedSpine) -> list[RigidTransform]:
    out = []
    acc = None
    for t in spine.relative_transforms:
        acc = t if acc is None else compose(acc, t)
        out.append(acc)
    return out


def to_relative(absolute: Sequence[RigidTransform]) -> list[RigidTransform]:
    absolute = list(absolute)
    rel = [absolute[0]]
    for prev, cur in zip(absolute[:-1], absolute[1:]):
        rel.append(compose(invert(prev), cur))
    return rel


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    mode: str
    label: str = "unknown"
    patient_id: str = ""
    visit_time: float = 0.0

    def __post_init__(self):
        _check_mode(self.mode)
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != feature_dim(self.mode):
            raise ValueError(f"mode {self.mode} expects {feature_dim(self.mode)} values, got {v.size}")
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        if self.visit_time < 0:
            raise ValueError("visit_time must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def to_feature_vector(
    spine: ArticulatedSpine, mode: str = "shape_poses", *, label: str = "unknown", patient_id: str = "", visit_time: float = 0.0
) -> FeatureVector:
    _check_mode(mode)
    blocks = []
    absolute = spine.absolute() if has_poses(mode) else None
    for k, vert in enumerate(spine.vertebrae):
        if absolute is not None:
            blocks.append(quat_from_matrix(absolute[k].rotation))
            blocks.append(absolute[k].translation)
        if has_shape(mode):
            blocks.append(vert.landmarks.reshape(-1))
    return FeatureVector(np.concatenate(blocks), mode, label, patient_id, float(visit_time))


def split_features(values: np.ndarray, mode: str) -> dict[str, np.ndarray]:
    """Views of a flat feature vector as quaternions (17,4), translations (17,3), landmarks (17,6,3)."""
    values = np.asarray(values, dtype=float)
    idx = block_indices(mode)
    out = {}
    if "quat" in idx:
        out["quat"] = values[idx["quat"]]
        out["trans"] = values[idx["trans"]]
    if "landmarks" in idx:
        out["landmarks"] = values[idx["landmarks"]].reshape(N_LEVELS, N_LANDMARKS, 3)
    return out


def from_feature_vector(fv: FeatureVector, template: Optional[ArticulatedSpine] = None) -> ArticulatedSpine:
    """Rebuild a spine. Blocks missing from the mode are taken from ``template``."""
    parts = split_features(fv.values, fv.mode)
    if ("quat" not in parts or "landmarks" not in parts) and template is None:
        raise ValueError(f"mode {fv.mode} lacks poses or shape; a template spine is required")
    if "quat" in parts:
        absolute = [RigidTransform.from_quaternion(q, t) for q, t in zip(parts["quat"], parts["trans"])]
    else:
        absolute = template.absolute()
    if "landmarks" in parts:
        verts = [VertebraModel.centered(lvl, lm) for lvl, lm in zip(LEVELS, parts["landmarks"])]
    else:
        verts = list(template.vertebrae)
    return ArticulatedSpine.from_absolute(absolute, verts)


def _rotation_distances(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """sqrt(2) * relative rotation angle between unit quaternions, broadcasting over leading axes.

    Uses 4 atan2(|qa - s qb|, |qa + s qb|) which is exactly zero for equal
    inputs and exactly symmetric, unlike arccos of the dot product.
    """
    qa = qa / np.linalg.norm(qa, axis=-1, keepdims=True)
    qb = qb / np.linalg.norm(qb, axis=-1, keepdims=True)
    s = np.where(np.sum(qa * qb, axis=-1, keepdims=True) < 0, -1.0, 1.0)
    num = np.linalg.norm(qa - s * qb, axis=-1)
    den = np.linalg.norm(qa + s * qb, axis=-1)
    return np.sqrt(2.0) * 4.0 * np.arctan2(num, den)


def pairwise_distances(a: np.ndarray, b: np.ndarray, mode: str) -> np.ndarray:
    """Matrix of articulated distances between rows of ``a`` (n, D) and ``b`` (m, D).

    Modes with poses use the sum over levels of translation L2 distance plus
    geodesic rotation distance; shape-only mode uses plain Euclidean distance.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if not has_poses(mode):
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    idx = block_indices(mode)
    out = np.zeros((a.shape[0], b.shape[0]))
    for k in range(N_LEVELS):
        ta, tb = a[:, idx["trans"][k]], b[:, idx["trans"][k]]
        out += np.linalg.norm(ta[:, None, :] - tb[None, :, :], axis=-1)
        qa, qb = a[:, idx["quat"][k]], b[:, idx["quat"][k]]
        out += _rotation_distances(qa[:, None, :], qb[None, :, :])
    return out


def articulated_distance(y1: FeatureVector, y2: FeatureVector) -> float:
    if y1.mode != y2.mode:
        raise IncompatibleFeaturesError(f"cannot compare {y1.mode} features with {y2.mode} features")
    return float(pairwise_distances(y1.values[None], y2.values[None], y1.mode)[0, 0])
