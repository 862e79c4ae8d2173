"""Seedable generator of synthetic longitudinal scoliosis cohorts.

Each patient has a fixed curve pattern (apex levels and directions). The
frontal tilt profile of the spine is the derivative of a Gaussian bump
centred on each apex, so the lateral deviation is a smooth bump and the
spine re-aligns above and below the curve. The profile amplitude at every
visit is solved numerically so the measured main Cobb angle equals the
programmed one exactly; progressive patients gain ``rate * t / 12`` degrees,
non-progressive ones drift by at most ``np_drift_max_deg``.

Progressive patients carry a baseline signature (hypokyphosis, stronger
apical axial rotation and pedicle asymmetry), which is what makes baseline
classification possible at all.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .metrics import main_cobb, main_cobb_from_rotations
from .se3 import RigidTransform
from .spine import LEVELS, N_LEVELS, ArticulatedSpine, VertebraModel

PROGRESSION_THRESHOLD_DEG = 6.0
THRESHOLD_TOL_DEG = 1e-9
DEFORMITY_CLASSES = ("C1", "C2", "C3", "C4", "C5")
_IDX = {lvl: i for i, lvl in enumerate(LEVELS)}
_BUMP_WIDTH = 3.0


class ConfigError(ValueError):
    pass


@dataclass
class CohortConfig:
    n_patients: int = 120
    fraction_progressive: float = 0.4
    visits_per_patient: tuple = (3, 4)
    visit_jitter_months: float = 2.0
    baseline_cobb_range_deg: tuple = (11.0, 40.0)
    progression_rate_range_deg_per_year: tuple = (5.0, 12.0)
    np_drift_max_deg: float = 4.0
    landmark_noise_mm: float = 0.5
    deformity_class_mix: tuple = (0.1, 0.3, 0.25, 0.25, 0.1)
    seed: int = 0
    # strength of the baseline features that distinguish progressive patients
    risk_signature: float = 1.0

    def validate(self) -> "CohortConfig":
        if self.n_patients < 1:
            raise ConfigError("n_patients must be positive")
        if not 0.0 <= self.fraction_progressive <= 1.0:
            raise ConfigError("fraction_progressive must lie in [0, 1]")
        vmin, vmax = self.visits_per_patient
        if vmin < 2 or vmin > vmax:
            raise ConfigError("visits_per_patient must be a range with at least 2 visits")
        if not 0.0 <= self.visit_jitter_months < 6.0:
            raise ConfigError("visit_jitter_months must lie in [0, 6)")
        for name in ("baseline_cobb_range_deg", "progression_rate_range_deg_per_year"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} is empty: {lo} > {hi}")
        if self.baseline_cobb_range_deg[0] < 0:
            raise ConfigError("baseline Cobb must be non-negative")
        if not 0.0 <= self.np_drift_max_deg <= PROGRESSION_THRESHOLD_DEG:
            raise ConfigError("np_drift_max_deg must lie in [0, 6] so labels respect the threshold")
        if self.baseline_cobb_range_deg[0] < self.np_drift_max_deg:
            raise ConfigError("baseline Cobb lower bound must exceed np_drift_max_deg")
        w = np.asarray(self.deformity_class_mix, dtype=float)
        if w.shape != (5,) or np.any(w < 0) or w.sum() <= 0:
            raise ConfigError("deformity_class_mix needs 5 non-negative weights with positive sum")
        if self.fraction_progressive > 0:
            horizon = 12.0 * (vmin - 1) - self.visit_jitter_months
            if self.progression_rate_range_deg_per_year[0] * horizon / 12.0 <= PROGRESSION_THRESHOLD_DEG:
                raise ConfigError("slowest progression cannot exceed 6 deg over the shortest follow-up")
        if self.landmark_noise_mm < 0:
            raise ConfigError("landmark_noise_mm must be non-negative")
        return self

    @property
    def class_weights(self) -> np.ndarray:
        w = np.asarray(self.deformity_class_mix, dtype=float)
        return w / w.sum()


@dataclass
class Patient:
    patient_id: str
    true_label: str
    flexibility_ratio: float
    deformity_class: str
    visits: list  # (visit_time_months, ArticulatedSpine), strictly increasing times
    truth: dict = field(default_factory=dict)

    @property
    def baseline(self) -> ArticulatedSpine:
        return self.visits[0][1]

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.visits]


@dataclass
class Cohort:
    patients: list
    config: Optional[CohortConfig] = None

    def by_id(self, pid: str) -> Patient:
        for p in self.patients:
            if p.patient_id == pid:
                return p
        raise KeyError(pid)

    def subset(self, ids) -> "Cohort":
        keep = set(ids)
        return Cohort([p for p in self.patients if p.patient_id in keep], self.config)


def _curve_pattern(cls: str, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """(apex index, direction, relative amplitude) per curve; +1 is a right convexity."""
    if cls == "C1":
        return [(rng.uniform(_IDX["L1"], _IDX["T11"]), rng.choice([-1.0, 1.0]), 1.0)]
    if cls == "C2":
        return [(rng.uniform(_IDX["T9"], _IDX["T7"]), 1.0, 1.0)]
    if cls == "C3":
        return [(rng.uniform(_IDX["L3"], _IDX["L1"]), -1.0, 1.0)]
    if cls == "C4":
        return [
            (rng.uniform(_IDX["T9"], _IDX["T7"]), 1.0, 1.0),
            (rng.uniform(_IDX["L3"], _IDX["L1"]), -1.0, rng.uniform(0.6, 0.9)),
        ]
    return [(rng.uniform(_IDX["T9"], _IDX["T7"]), -1.0, 1.0)]


def _profiles(pattern) -> tuple[np.ndarray, np.ndarray]:
    """Unit-amplitude absolute frontal tilt profile and lateral bump profile per level."""
    k = np.arange(N_LEVELS, dtype=float)
    tilt = np.zeros(N_LEVELS)
    bump = np.zeros(N_LEVELS)
    for apex, sign, amp in pattern:
        u = (k - apex) / _BUMP_WIDTH
        g = np.exp(-0.5 * u * u)
        tilt += sign * amp * (-u) * g
        bump += sign * amp * g
    return tilt, bump


@dataclass
class _Anatomy:
    spacing: np.ndarray
    sagittal: np.ndarray
    tilt_profile: np.ndarray
    bump_profile: np.ndarray
    axial_gain: float
    template: np.ndarray  # (17, 6, 3)
    asym_profile: np.ndarray
    asym_const: float


def _relative_rotations(an: _Anatomy, amp: float) -> np.ndarray:
    """Relative rotations for curve amplitude ``amp`` (degrees of peak tilt)."""
    frontal = np.radians(amp * an.tilt_profile)
    axial = np.radians(an.axial_gain * amp * an.bump_profile)
    # L5 is the world anchor, so profiles are measured relative to it
    d_front = np.diff(frontal, prepend=frontal[0])
    d_axial = np.diff(axial, prepend=axial[0])
    rots = np.empty((N_LEVELS, 3, 3))
    for k in range(N_LEVELS):
        cz, sz = np.cos(d_axial[k]), np.sin(d_axial[k])
        cy, sy = np.cos(d_front[k]), np.sin(d_front[k])
        cx, sx = np.cos(an.sagittal[k]), np.sin(an.sagittal[k])
        rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
        ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
        rots[k] = rz @ ry @ rx
    return rots


def _absolute_rotations(rel: np.ndarray) -> np.ndarray:
    out = np.empty_like(rel)
    acc = np.eye(3)
    for k in range(N_LEVELS):
        acc = acc @ rel[k]
        out[k] = acc
    return out


def _cobb_for(an: _Anatomy, amp: float) -> float:
    return main_cobb_from_rotations(_absolute_rotations(_relative_rotations(an, amp)))


def _solve_amplitude(an: _Anatomy, target: float) -> float:
    if target <= 0:
        return 0.0
    hi = 10.0
    while _cobb_for(an, hi) < target:
        hi *= 2.0
        if hi > 1e4:
            raise ConfigError(f"cannot reach a main Cobb angle of {target} deg")
    return brentq(lambda a: _cobb_for(an, a) - target, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


def _template_landmarks(scale: float) -> np.ndarray:
    k = np.arange(N_LEVELS, dtype=float)
    height = scale * (28.0 - 10.0 * k / 16.0)
    px = scale * (12.0 - 4.0 * k / 16.0)
    py = np.full(N_LEVELS, scale * 10.0)
    lm = np.zeros((N_LEVELS, 6, 3))
    hp, hz = 0.3 * height, 0.5 * height
    lm[:, 0] = np.stack([-px, -py, hp], axis=1)
    lm[:, 1] = np.stack([-px, -py, -hp], axis=1)
    lm[:, 2] = np.stack([px, -py, hp], axis=1)
    lm[:, 3] = np.stack([px, -py, -hp], axis=1)
    lm[:, 4] = np.stack([np.zeros(N_LEVELS), 2 * py, hz], axis=1)
    lm[:, 5] = np.stack([np.zeros(N_LEVELS), 2 * py, -hz], axis=1)
    return lm


def _spacing(template: np.ndarray) -> np.ndarray:
    """Distance between consecutive vertebral centres: half heights plus a disc."""
    height = template[:, 4, 2] - template[:, 5, 2]
    disc = 6.0 - 2.0 * np.arange(N_LEVELS) / 16.0
    spacing = np.zeros(N_LEVELS)
    spacing[1:] = 0.5 * (height[1:] + height[:-1]) + disc[1:]
    return spacing


def _build_spine(an: _Anatomy, amp: float, rng: np.random.Generator, noise: float) -> ArticulatedSpine:
    rel = _relative_rotations(an, amp)
    transforms = []
    for k in range(N_LEVELS):
        t = np.zeros(3) if k == 0 else np.array([0.0, 0.0, an.spacing[k]])
        transforms.append(RigidTransform(rel[k], t))
    # wedge-like pedicle height asymmetry grows with the local curve
    asym = (an.asym_const + 0.04 * amp) * an.asym_profile
    verts = []
    for k, lvl in enumerate(LEVELS):
        lm = an.template[k].copy()
        lm[0, 2] += asym[k]
        lm[2, 2] -= asym[k]
        if noise > 0:
            lm = lm + rng.normal(scale=noise, size=lm.shape)
        verts.append(VertebraModel.centered(lvl, lm))
    return ArticulatedSpine(tuple(verts), tuple(transforms))


def _make_patient(index: int, label: str, cfg: CohortConfig) -> Patient:
    rng = np.random.default_rng([cfg.seed & (2**64 - 1), index])
    progressive = label == "P"
    cls = DEFORMITY_CLASSES[int(rng.choice(5, p=cfg.class_weights))]
    pattern = _curve_pattern(cls, rng)
    tilt, bump = _profiles(pattern)

    n_vis = int(rng.integers(cfg.visits_per_patient[0], cfg.visits_per_patient[1] + 1))
    jitter = rng.uniform(-cfg.visit_jitter_months, cfg.visit_jitter_months, size=n_vis)
    times = [0.0] + [12.0 * j + float(jitter[j]) for j in range(1, n_vis)]

    cobb0 = float(rng.uniform(*cfg.baseline_cobb_range_deg))
    rate_lo, rate_hi = cfg.progression_rate_range_deg_per_year
    if progressive:
        rate = float(rng.uniform(rate_lo, rate_hi))
        flex = 0.8 * rate / rate_hi + float(rng.uniform(-0.02, 0.02))
        cobbs = [cobb0 + rate * t / 12.0 for t in times]
    else:
        drift = float(rng.uniform(-cfg.np_drift_max_deg, cfg.np_drift_max_deg))
        rate = 12.0 * drift / times[-1]
        flex = float(rng.uniform(0.2, 0.35))
        cobbs = [cobb0 + drift * t / times[-1] for t in times]
    flex = float(np.clip(flex, 0.2, 0.8))

    sig = cfg.risk_signature if progressive else 0.0
    scale = float(rng.uniform(0.92, 1.08))
    kyph = float(rng.uniform(30.0, 45.0)) - 12.0 * sig
    lord = float(rng.uniform(35.0, 50.0))
    sagittal = np.zeros(N_LEVELS)
    sagittal[1:6] = np.radians(lord / 5.0)
    sagittal[6:14] = -np.radians(kyph / 8.0)
    # upper thoracic joints restore sagittal balance
    sagittal[14:] = np.radians((kyph - lord) / 3.0)
    template = _template_landmarks(scale)
    spacing = _spacing(template)
    an = _Anatomy(
        spacing=spacing,
        sagittal=sagittal,
        tilt_profile=tilt,
        bump_profile=bump,
        axial_gain=0.3 + 0.5 * sig,
        template=template,
        asym_profile=np.abs(bump),
        asym_const=1.5 * sig,
    )
    visits = []
    for t, cobb in zip(times, cobbs):
        amp = _solve_amplitude(an, cobb)
        visits.append((float(t), _build_spine(an, amp, rng, cfg.landmark_noise_mm)))
    truth = {"cobb": cobbs, "rate_deg_per_year": rate, "pattern": [list(map(float, p)) for p in pattern]}
    return Patient(f"p{index:03d}", label, flex, cls, visits, truth)


def generate_cohort(config: CohortConfig) -> Cohort:
    config.validate()
    n_p = int(round(config.n_patients * config.fraction_progressive))
    order = np.random.default_rng([config.seed & (2**64 - 1), 2**31]).permutation(config.n_patients)
    labels = np.full(config.n_patients, "NP", dtype=object)
    labels[order[:n_p]] = "P"
    patients = [_make_patient(i, str(labels[i]), config) for i in range(config.n_patients)]
    return Cohort(patients, config)


def label_progression(baseline: ArticulatedSpine, last: ArticulatedSpine) -> str:
    """P iff the main Cobb angle grows by strictly more than 6 degrees.

    A change within 1e-9 degrees of the threshold counts as equal to it, so
    rounding in the angle computation cannot turn exactly 6 degrees into P.
    """
    delta = main_cobb(last) - main_cobb(baseline)
    return "P" if delta > PROGRESSION_THRESHOLD_DEG + THRESHOLD_TOL_DEG else "NP"


def neutral_spine(scale: float = 1.0) -> ArticulatedSpine:
    """Straight spine with the generator's template landmarks and disc spacing.

    Used to supply the missing block when rebuilding spines from shape-only
    or pose-only features.
    """
    template = _template_landmarks(scale)
    spacing = _spacing(template)
    transforms = [RigidTransform(np.eye(3), np.array([0.0, 0.0, spacing[k]])) for k in range(N_LEVELS)]
    verts = [VertebraModel.centered(lvl, template[k]) for k, lvl in enumerate(LEVELS)]
    return ArticulatedSpine(tuple(verts), tuple(transforms))
