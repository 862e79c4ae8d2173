"""Nadaraya-Watson style projection of an ambient spine into latent space.

The ambient kernel selects and weights the K nearest anchors by the
articulated distance. The latent estimate minimises a kernel-weighted sum
of latent distances to those anchors,

    F(x) = sum_j G_h(d(y_q, y_j)) * Psi_g(|x - x_j|),   Psi_g(r) = int_0^r G_g(s) ds,

which behaves like the plain latent distance near each anchor and saturates
beyond the latent bandwidth g, so remote anchors cannot drag the estimate.
It is minimised by iteratively reweighted means that start from the kernel
weighted mean of the neighbour latents.

Gaussian kernels are parametrised by a support radius: G_h(d) =
exp(-0.5 (3 d / h)^2), so a bandwidth that "covers" a set of points puts
them all within three standard deviations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .dpllvm import TrainedManifold
from .graphs import knn_indices
from .spine import FeatureVector, IncompatibleFeaturesError, pairwise_distances

MAX_REFINEMENTS = 20
MOVE_TOL = 1e-8


class BandwidthError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    k_neighbors: int = 10
    bandwidth_h: Optional[float] = None
    bandwidth_g: Optional[float] = None
    auto_bandwidth: bool = True
    metric: str = "articulated"  # or "euclidean" for a plain RBF kernel

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if self.metric not in ("articulated", "euclidean"):
            raise ValueError(f"unknown kernel metric {self.metric!r}")
        if not self.auto_bandwidth:
            for name in ("bandwidth_h", "bandwidth_g"):
                v = getattr(self, name)
                if v is None or not v > 0:
                    raise ValueError(f"{name} must be positive when auto_bandwidth is off")


@dataclass
class Projection:
    x: np.ndarray
    neighbors: np.ndarray  # anchor indices
    weights: np.ndarray  # normalised ambient kernel weights
    bandwidth_h: float
    bandwidth_g: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def gaussian(d, h: float) -> np.ndarray:
    return np.exp(-0.5 * (3.0 * np.asarray(d, dtype=float) / h) ** 2)


def saturating_distance(r, g: float) -> np.ndarray:
    """Psi_g(r) = integral of the latent kernel from 0 to r."""
    s = g / 3.0
    return s * np.sqrt(np.pi / 2.0) * erf(np.asarray(r, dtype=float) / (s * np.sqrt(2.0)))


def objective(x, latents, weights, g: float) -> float:
    r = np.linalg.norm(latents - np.asarray(x, dtype=float), axis=1)
    return float(weights @ saturating_distance(r, g))


def candidate_anchors(m: TrainedManifold, restrict_progressive_baseline: bool) -> np.ndarray:
    if not restrict_progressive_baseline:
        return np.arange(m.n)
    return np.array([i for i, a in enumerate(m.anchors) if a.label == "P" and a.visit_time == 0.0], dtype=int)


def ambient_distances(m: TrainedManifold, y_q: FeatureVector, idx: np.ndarray, metric: str) -> np.ndarray:
    values = m.anchor_values()[idx]
    if metric == "euclidean":
        z = m.standardize(values)
        return np.linalg.norm(z - m.standardize(y_q.values), axis=1)
    return pairwise_distances(y_q.values[None], values, m.mode)[0]


def nw_project_details(
    m: TrainedManifold,
    y_q: FeatureVector,
    cfg: KernelConfig = KernelConfig(),
    restrict_progressive_baseline: bool = False,
    exclude: Optional[np.ndarray] = None,
) -> Projection:
    """Project ``y_q`` and report the neighbourhood and kernel weights used.

    ``exclude`` is an optional boolean mask of anchors to ignore, used for
    leave-one-patient-out diagnostics.
    """
    if y_q.mode != m.mode:
        raise IncompatibleFeaturesError(f"query mode {y_q.mode} differs from model mode {m.mode}")
    cand = candidate_anchors(m, restrict_progressive_baseline)
    if exclude is not None:
        cand = cand[~np.asarray(exclude, dtype=bool)[cand]]
    if cand.size < cfg.k_neighbors:
        raise ValueError(
            f"only {cand.size} eligible anchors"
            + (" (progressive baselines)" if restrict_progressive_baseline else "")
            + f", need K={cfg.k_neighbors}"
        )
    dist_c = ambient_distances(m, y_q, cand, cfg.metric)
    local = knn_indices(dist_c, np.arange(cand.size), cfg.k_neighbors)
    nb, dist = cand[local], dist_c[local]
    lat = m.latent_mean[nb]

    if cfg.auto_bandwidth:
        h = float(dist.max())
        a = gaussian(dist, h) if h > 0 else np.ones_like(dist)
    else:
        h = float(cfg.bandwidth_h)
        a = gaussian(dist, h)
    if a.sum() <= 0 or not np.isfinite(a.sum()):
        raise BandwidthError(f"all ambient kernel weights underflow at h={h:.4g}; use auto_bandwidth")
    a = a / a.sum()

    x = a @ lat
    if cfg.auto_bandwidth:
        g = float(np.linalg.norm(lat - x, axis=1).max())
    else:
        g = float(cfg.bandwidth_g)
    trace = [x.copy()]
    converged = g == 0.0 or nb.size == 1
    it = 0
    while not converged and it < MAX_REFINEMENTS:
        it += 1
        r = np.linalg.norm(lat - x, axis=1)
        j = int(np.argmin(r))
        if r[j] <= MOVE_TOL and _vertex_is_optimal(j, lat, a, g):
            x = lat[j].copy()
            trace.append(x.copy())
            converged = True
            break
        w = a * gaussian(r, g) / np.maximum(r, 1e-300)
        if w.sum() <= 0 or not np.isfinite(w.sum()):
            raise BandwidthError(f"latent kernel weights underflow at g={g:.4g}; use auto_bandwidth")
        new = w @ lat / w.sum()
        step = float(np.linalg.norm(new - x))
        x = new
        trace.append(x.copy())
        converged = step < MOVE_TOL
    return Projection(x, nb, a, h, g, it, converged, trace)


def _vertex_is_optimal(j: int, lat: np.ndarray, a: np.ndarray, g: float) -> bool:
    """Subgradient condition for the objective to have a minimum at anchor j."""
    diff = lat[j] - lat
    r = np.linalg.norm(diff, axis=1)
    others = r > 0
    pull = (a[others] * gaussian(r[others], g) / r[others]) @ diff[others]
    return float(np.linalg.norm(pull)) <= a[r == 0].sum()


def nw_project(
    m: TrainedManifold,
    y_q: FeatureVector,
    cfg: KernelConfig = KernelConfig(),
    restrict_progressive_baseline: bool = False,
) -> np.ndarray:
    return nw_project_details(m, y_q, cfg, restrict_progressive_baseline).x
