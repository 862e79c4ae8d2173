"""Transport of a regressed latent curve to a new patient and back to spines.

A new patient's trajectory is modelled as a parallel of the neighbourhood
curve gamma: eta(t) = gamma(psi(t)) + v, where psi is an affine time warp
driven by spinal flexibility and v is a spatial shift orthogonal to the
curve's initial tangent. Latent points are mapped back to the ambient space
by a kernel-weighted blend of the local linear maps of nearby anchors.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dpllvm import TrainedManifold
from .regression import DiscreteCurve, TrajectoryBundle, evaluate_curve, velocity
from .se3 import fix_hemisphere
from .spine import ArticulatedSpine, FeatureVector, from_feature_vector, split_features, block_indices

log = logging.getLogger(__name__)

EXTRAPOLATION_FACTOR = 5.0


class ExtrapolationError(ValueError):
    """A latent point lies too far from every anchor to be reconstructed."""


@dataclass(frozen=True)
class TimeWarp:
    """psi(t) = c (t - t0 - tau) + t0."""

    c: float = 1.0
    tau: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ValueError(f"time warp factor must be positive, got {self.c}")


def time_warp(w: TimeWarp, t: float) -> float:
    return w.c * (float(t) - w.t0 - w.tau) + w.t0


def flexibility_warp(flex_q: float, neighbor_flex: Sequence[float], weights: Sequence[float]) -> TimeWarp:
    """Warp factor from the patient's flexibility relative to the weighted neighbour mean.

    The neighbour trajectories already run at their own pace, so the factor
    is relative: ``C_q`` over the weighted mean neighbour ratio. A patient
    more flexible than the neighbourhood moves along the curve faster.
    """
    f = np.asarray(neighbor_flex, dtype=float)
    w = np.asarray(weights, dtype=float)
    ref = float(w @ f / w.sum())
    if not (ref > 0 and flex_q > 0):
        raise ValueError("flexibility ratios must be positive")
    return TimeWarp(c=flex_q / ref)


@dataclass(frozen=True, eq=False)
class SpaceShift:
    v: np.ndarray
    tangent: np.ndarray
    direction: Optional[np.ndarray] = None
    warning: Optional[str] = None


def _deterministic_sign(e: np.ndarray) -> np.ndarray:
    j = int(np.argmax(np.abs(e)))
    return e if e[j] >= 0 else -e


def space_shift(x_q: np.ndarray, curve: DiscreteCurve, bundle: TrajectoryBundle) -> SpaceShift:
    """Shift orthogonal to the initial tangent of ``curve``.

    With u the tangent at the start of the curve and P the projector onto its
    orthogonal complement, the offset ``P (x_q - gamma(t0))`` is re-oriented
    along the principal direction e of the projected neighbour baselines,
    keeping its length and the sign of its component along e. Without a
    principal direction (one neighbour, or coincident baselines) the raw
    projected offset is used. A vanishing tangent leaves the unprojected
    offset and records a warning.
    """
    x_q = np.asarray(x_q, dtype=float).reshape(-1)
    t0 = float(curve.times[0])
    delta = x_q - evaluate_curve(curve, t0)
    u = velocity(curve, t0)
    un = float(np.linalg.norm(u))
    if un <= 1e-14 * max(1.0, float(np.abs(curve.nodes).max())):
        msg = "curve tangent vanishes at the baseline; shift is not orthogonalised"
        warnings.warn(msg, RuntimeWarning)
        return SpaceShift(delta, u, None, msg)
    u_hat = u / un
    proj = np.eye(u.size) - np.outer(u_hat, u_hat)
    pd = proj @ delta
    base = np.asarray(bundle.baselines, dtype=float) @ proj
    w = np.asarray(bundle.weights, dtype=float)
    centred = base - w @ base
    cov = (centred * w[:, None]).T @ centred
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(base).max())) ** 2
    if vals[-1] <= 1e-12 * scale:
        return SpaceShift(pd, u, None, None)
    e = proj @ vecs[:, -1]
    e = _deterministic_sign(e / np.linalg.norm(e))
    sign = 1.0 if pd @ e >= 0 else -1.0
    return SpaceShift(sign * float(np.linalg.norm(pd)) * e, u, e, None)


def parallel_curve_point(curve: DiscreteCurve, v: np.ndarray, s: float) -> np.ndarray:
    """eta = gamma(s) + v; ``s`` must lie in the curve domain."""
    return evaluate_curve(curve, s) + np.asarray(v, dtype=float)


def clamp_to_domain(curve: DiscreteCurve, s: float) -> tuple[float, Optional[str]]:
    lo, hi = float(curve.times[0]), float(curve.times[-1])
    if lo <= s <= hi:
        return float(s), None
    c = min(max(float(s), lo), hi)
    return c, f"warped time {s:.3f} clamped to the curve domain [{lo:g}, {hi:g}]"


# ---------------------------------------------------------------------------
# latent to ambient
# ---------------------------------------------------------------------------


def latent_spacing(m: TrainedManifold) -> float:
    """Median distance from an anchor latent to its nearest other anchor."""
    cached = m.diagnostics.get("latent_spacing")
    if cached is not None:
        return float(cached)
    x = m.latent_mean
    d2 = np.sum(x * x, axis=1)
    dist = np.sqrt(np.maximum(d2[:, None] + d2[None, :] - 2.0 * x @ x.T, 0.0))
    np.fill_diagonal(dist, np.inf)
    return float(np.median(dist.min(axis=1)))


def reconstruct_ambient(
    m: TrainedManifold,
    x: np.ndarray,
    k: Optional[int] = None,
    check_extrapolation: bool = True,
    exclude: Optional[np.ndarray] = None,
) -> FeatureVector:
    """Kernel blend of the anchors' local linear maps evaluated at ``x``.

    y = sum_j w_j (y_j + M_j (x - x_j)) over the k latent-nearest anchors,
    with Gaussian weights whose support radius is the distance to the k-th
    anchor. Quaternions are renormalised onto the positive hemisphere and
    landmark sets re-centred. A point farther than five median anchor
    spacings from every anchor raises :class:`ExtrapolationError`.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != m.latent_dim:
        raise ValueError(f"latent point has {x.size} coordinates, model has {m.latent_dim}")
    k = m.graphs.k if k is None else int(k)
    cand = np.arange(m.n)
    if exclude is not None:
        cand = cand[~np.asarray(exclude, dtype=bool)]
    diff = x - m.latent_mean[cand]
    dist = np.linalg.norm(diff, axis=1)
    order = np.argsort(dist, kind="stable")[:k]
    nb, dn = cand[order], dist[order]
    if check_extrapolation:
        limit = EXTRAPOLATION_FACTOR * latent_spacing(m)
        if dn[0] > limit:
            raise ExtrapolationError(
                f"latent point is {dn[0]:.4g} from the nearest anchor, beyond {EXTRAPOLATION_FACTOR:g} spacings ({limit:.4g})"
            )
    h = float(dn[-1])
    if h > 0:
        w = np.exp(-0.5 * (3.0 * dn / h) ** 2)
    else:
        w = np.ones_like(dn)
    if dn[0] == 0.0:
        w = (dn == 0.0).astype(float)
    w = w / w.sum()
    z_anchor = m.standardize(m.anchor_values()[nb])
    local = z_anchor + np.einsum("jrd,jd->jr", m.map_mean[nb], diff[order])
    z = w @ local
    values = m.destandardize(z)[0]
    values = _tidy(values, m.mode)
    return FeatureVector(values, m.mode)


def _tidy(values: np.ndarray, mode: str) -> np.ndarray:
    """Unit positive-hemisphere quaternions and zero-mean landmark sets."""
    out = values.copy()
    idx = block_indices(mode)
    parts = split_features(values, mode)
    if "quat" in parts:
        q = parts["quat"]
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        out[idx["quat"]] = np.stack([fix_hemisphere(r) for r in q])
    if "landmarks" in parts:
        lm = parts["landmarks"]
        out[idx["landmarks"]] = (lm - lm.mean(axis=1, keepdims=True)).reshape(lm.shape[0], -1)
    return out


@dataclass
class PredictionResult:
    times: list  # requested follow-up months
    warped_times: list
    latents: np.ndarray  # (T, d)
    spines: list  # ArticulatedSpine per time
    features: list  # FeatureVector per time
    warnings: list = field(default_factory=list)


def predict_spine(
    m: TrainedManifold,
    curve: DiscreteCurve,
    shift: SpaceShift,
    warp: TimeWarp,
    times: Sequence[float],
    template: Optional[ArticulatedSpine] = None,
    check_extrapolation: bool = True,
) -> PredictionResult:
    """Evaluate the transported curve at ``times`` and rebuild spines."""
    warped, lat, spines, feats, notes = [], [], [], [], []
    if shift.warning:
        notes.append(shift.warning)
    for t in times:
        s, note = clamp_to_domain(curve, time_warp(warp, t))
        if note:
            warnings.warn(note, RuntimeWarning)
            notes.append(note)
        x = parallel_curve_point(curve, shift.v, s)
        fv = reconstruct_ambient(m, x, check_extrapolation=check_extrapolation)
        warped.append(s)
        lat.append(x)
        feats.append(fv)
        spines.append(from_feature_vector(fv, template))
    return PredictionResult(list(map(float, times)), warped, np.array(lat), spines, feats, notes)


@dataclass(frozen=True)
class PredictionConfig:
    k_neighbors: int = 10
    k_d: int = 25
    lam: float = 0.1
    mu: float = 1.0
    horizon_months: float = 36.0
    tau: float = 0.0


@dataclass
class PatientPrediction:
    x_q: np.ndarray
    projection: object
    bundle: TrajectoryBundle
    curve: DiscreteCurve
    shift: SpaceShift
    warp: TimeWarp
    result: PredictionResult


def predict_patient(
    m: TrainedManifold,
    baseline: ArticulatedSpine,
    flexibility_ratio: float,
    times: Sequence[float],
    cfg: PredictionConfig = PredictionConfig(),
    exclude: Optional[np.ndarray] = None,
    check_extrapolation: bool = True,
) -> PatientPrediction:
    """Full prediction chain for one baseline spine.

    The baseline is projected among the progressive baseline anchors, the
    neighbours' trajectories are regressed into a curve, and the curve is
    transported with the flexibility time warp and the orthogonal shift.
    ``exclude`` masks anchors out of every step (used for self-consistency
    diagnostics on training patients).
    """
    from .projection import KernelConfig, nw_project_details
    from .regression import build_bundle, fit_curve
    from .spine import to_feature_vector

    if flexibility_ratio is None or not flexibility_ratio > 0:
        raise ValueError("a positive flexibility ratio is required for prediction")
    y_q = to_feature_vector(baseline, m.mode)
    proj = nw_project_details(m, y_q, KernelConfig(k_neighbors=cfg.k_neighbors), True, exclude)
    pids = [m.anchors[j].patient_id for j in proj.neighbors]
    bundle = build_bundle(m, proj.x, pids)
    data_end = max(float(t[-1]) for t in bundle.times)
    horizon = max(cfg.horizon_months, float(max(times, default=0.0)), data_end)
    curve = fit_curve(bundle, cfg.k_d, cfg.lam, cfg.mu, domain=(0.0, horizon))
    shift = space_shift(proj.x, curve, bundle)
    notes = []
    flex = [m.flexibility.get(p) for p in bundle.patient_ids]
    if any(f is None for f in flex):
        msg = "neighbour flexibility ratios unavailable; time warp left at identity"
        warnings.warn(msg, RuntimeWarning)
        notes.append(msg)
        warp = TimeWarp(1.0, cfg.tau)
    else:
        warp = replace_tau(flexibility_warp(flexibility_ratio, flex, bundle.weights), cfg.tau)
    res = predict_spine(m, curve, shift, warp, times, baseline, check_extrapolation)
    res.warnings = notes + res.warnings
    return PatientPrediction(proj.x, proj, bundle, curve, shift, warp, res)


def replace_tau(w: TimeWarp, tau: float) -> TimeWarp:
    return TimeWarp(w.c, float(tau), w.t0)
