"""Regression of a smooth latent curve through baseline-aligned trajectories.

The curve gamma is a piecewise linear path through K_d uniformly timed
nodes. Its energy is a weighted data misfit plus velocity and acceleration
penalties,

    E = 1/2 sum_i sum_j w_i |gamma(t_ij) - x~_ij|^2
        + lambda/2 sum_k alpha_k |v_k|^2 + mu/2 sum_k beta_k |a_k|^2,

with forward-difference velocities and central-difference accelerations.
E is quadratic in the nodes, so the nonlinear conjugate gradient solver can
be checked against a direct solve of the normal equations.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_NODES = 25
DEFAULT_LAMBDA = 0.1
DEFAULT_MU = 1.0
DEFAULT_HORIZON = 36.0


class DomainError(ValueError):
    """A time lies outside the curve's domain."""


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """Neighbour trajectories shifted so every baseline sits on ``x_q``."""

    times: tuple  # per trajectory, increasing month values starting at 0
    points: tuple  # per trajectory, (n_i, d) shifted latents
    weights: np.ndarray  # (K,), non-negative, sum 1
    x_q: np.ndarray
    baselines: np.ndarray  # (K, d) unshifted baseline latents
    patient_ids: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != len(self.times) or len(self.points) != w.size:
            raise ValueError("bundle needs one weight per trajectory")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
            raise ValueError("bundle weights must be non-negative and sum to 1")
        for t in self.times:
            if np.any(np.diff(t) <= 0):
                raise ValueError("trajectory times must be strictly increasing")

    @property
    def dim(self) -> int:
        return int(np.asarray(self.x_q).size)

    def flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All data as (times, points, per-point weights)."""
        t = np.concatenate([np.asarray(ti, dtype=float) for ti in self.times])
        x = np.concatenate([np.asarray(p, dtype=float).reshape(len(ti), -1) for ti, p in zip(self.times, self.points)])
        w = np.concatenate([np.full(len(ti), wi) for ti, wi in zip(self.times, self.weights)])
        return t, x, w


@dataclass(frozen=True, eq=False)
class DiscreteCurve:
    nodes: np.ndarray  # (K_d, d)
    times: np.ndarray  # (K_d,)
    lam: float = DEFAULT_LAMBDA
    mu: float = DEFAULT_MU
    alpha: Optional[np.ndarray] = None  # velocity weights, K_d - 1
    beta: Optional[np.ndarray] = None  # acceleration weights, K_d - 2
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        times = np.array(self.times, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        k = times.size
        if k < 3 or nodes.shape[0] != k:
            raise ValueError("a curve needs at least 3 nodes, one per time")
        dt = np.diff(times)
        if np.any(dt <= 0) or np.abs(dt - dt.mean()).max() > 1e-12 * max(1.0, abs(times).max()):
            raise ValueError("node times must be strictly increasing and uniform")
        alpha = np.ones(k - 1) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        beta = np.ones(k - 2) if self.beta is None else np.asarray(self.beta, dtype=float)
        if alpha.shape != (k - 1,) or beta.shape != (k - 2,):
            raise ValueError("alpha needs K_d - 1 entries and beta K_d - 2")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / (self.times.size - 1))

    def with_nodes(self, nodes: np.ndarray, **info) -> "DiscreteCurve":
        return DiscreteCurve(nodes, self.times, self.lam, self.mu, self.alpha, self.beta, {**self.info, **info})


class EmptyBundleError(ValueError):
    """No neighbour has the two visits needed to form a trajectory."""


def build_bundle(m, x_q: np.ndarray, patient_ids: Sequence[str], bandwidth: Optional[float] = None) -> TrajectoryBundle:
    """Collect the longitudinal latents of ``patient_ids`` and shift them onto ``x_q``.

    Every visit of patient i becomes ``x_ij - x_i0 + x_q`` at time
    ``t_ij - t_i0``. Trajectory weights are a Gaussian kernel of the baseline
    latent distance to ``x_q``, normalised to sum to one. The default
    bandwidth is the largest such distance, read as a three-sigma support
    radius. Patients with a single visit are skipped with a warning.
    """
    x_q = np.asarray(x_q, dtype=float).reshape(-1)
    visits: dict[str, list[int]] = {}
    for i, a in enumerate(m.anchors):
        visits.setdefault(a.patient_id, []).append(i)
    times, points, bases, kept = [], [], [], []
    for pid in dict.fromkeys(patient_ids):
        idx = sorted(visits.get(pid, []), key=lambda i: m.anchors[i].visit_time)
        if len(idx) < 2:
            warnings.warn(f"neighbour {pid!r} has {len(idx)} visit(s) and is left out of the bundle", RuntimeWarning)
            continue
        lat = m.latent_mean[idx]
        t = np.array([m.anchors[i].visit_time for i in idx])
        times.append(t - t[0])
        points.append(lat - lat[0] + x_q)
        bases.append(lat[0])
        kept.append(pid)
    if not kept:
        raise EmptyBundleError("no neighbour has two or more visits")
    bases = np.array(bases)
    dist = np.linalg.norm(bases - x_q, axis=1)
    g = float(dist.max()) if bandwidth is None else float(bandwidth)
    w = np.exp(-0.5 * (3.0 * dist / g) ** 2) if g > 0 else np.ones_like(dist)
    if w.sum() <= 0:
        raise ValueError(f"trajectory weights underflow at bandwidth {g:.4g}")
    return TrajectoryBundle(tuple(times), tuple(points), w / w.sum(), x_q, bases, tuple(kept))


def uniform_times(t_start: float, t_end: float, k: int) -> np.ndarray:
    times = t_start + (t_end - t_start) * np.arange(k) / (k - 1)
    times[-1] = t_end
    return times


# ---------------------------------------------------------------------------
# the quadratic energy
# ---------------------------------------------------------------------------


def interpolation_matrix(times: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Rows of linear interpolation weights on the nodes for each time in ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    t0, t1 = times[0], times[-1]
    if np.any(t < t0) or np.any(t > t1):
        bad = t[(t < t0) | (t > t1)]
        raise DomainError(f"times {bad.tolist()} fall outside the curve domain [{t0}, {t1}]")
    k = times.size
    dt = (t1 - t0) / (k - 1)
    idx = np.clip(np.floor((t - t0) / dt).astype(int), 0, k - 2)
    theta = np.clip((t - times[idx]) / dt, 0.0, 1.0)
    out = np.zeros((t.size, k))
    rows = np.arange(t.size)
    out[rows, idx] = 1.0 - theta
    out[rows, idx + 1] += theta
    return out


def difference_operators(k: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    d1 = (np.eye(k, k, 1) - np.eye(k))[: k - 1] / dt
    d2 = np.zeros((k - 2, k))
    for i in range(k - 2):
        d2[i, i : i + 3] = (1.0, -2.0, 1.0)
    return d1, d2 / (dt * dt)


@dataclass
class _Quadratic:
    hess: np.ndarray  # (K_d, K_d), shared by every latent coordinate
    rhs: np.ndarray  # (K_d, d)
    const: float


def _quadratic(curve: DiscreteCurve, bundle: TrajectoryBundle) -> _Quadratic:
    t, x, w = bundle.flat()
    b = interpolation_matrix(curve.times, t)
    d1, d2 = difference_operators(curve.times.size, curve.dt)
    hess = b.T @ (w[:, None] * b) + curve.lam * d1.T @ (curve.alpha[:, None] * d1)
    hess = hess + curve.mu * d2.T @ (curve.beta[:, None] * d2)
    return _Quadratic(hess, b.T @ (w[:, None] * x), 0.5 * float(np.sum(w[:, None] * x * x)))


def energy(curve: DiscreteCurve, bundle: TrajectoryBundle) -> float:
    t, x, w = bundle.flat()
    g = curve.nodes
    misfit = interpolation_matrix(curve.times, t) @ g - x
    vel = np.diff(g, axis=0) / curve.dt
    acc = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / curve.dt**2
    return float(
        0.5 * np.sum(w * np.sum(misfit**2, axis=1))
        + 0.5 * curve.lam * np.sum(curve.alpha * np.sum(vel**2, axis=1))
        + 0.5 * curve.mu * np.sum(curve.beta * np.sum(acc**2, axis=1))
    )


def energy_gradient(curve: DiscreteCurve, bundle: TrajectoryBundle) -> np.ndarray:
    q = _quadratic(curve, bundle)
    return q.hess @ curve.nodes - q.rhs


def direct_solve(curve: DiscreteCurve, bundle: TrajectoryBundle) -> DiscreteCurve:
    """Exact minimiser from the assembled normal equations."""
    q = _quadratic(curve, bundle)
    try:
        nodes = np.linalg.solve(q.hess, q.rhs)
    except np.linalg.LinAlgError:
        nodes = np.linalg.lstsq(q.hess, q.rhs, rcond=None)[0]
    return curve.with_nodes(nodes, method="direct")


# ---------------------------------------------------------------------------
# nonlinear conjugate gradient
# ---------------------------------------------------------------------------


def initial_nodes(times: np.ndarray, bundle: TrajectoryBundle) -> np.ndarray:
    """Weighted mean of the data nearest each node, interpolated over empty bins."""
    t, x, w = bundle.flat()
    dt = times[1] - times[0]
    bins = np.clip(np.rint((t - times[0]) / dt).astype(int), 0, times.size - 1)
    sums = np.zeros((times.size, x.shape[1]))
    mass = np.zeros(times.size)
    np.add.at(sums, bins, w[:, None] * x)
    np.add.at(mass, bins, w)
    full = mass > 0
    if not full.any():
        return np.tile(np.asarray(bundle.x_q, dtype=float), (times.size, 1))
    means = sums[full] / mass[full, None]
    return np.stack([np.interp(times, times[full], means[:, j]) for j in range(x.shape[1])], axis=1)


def fit_curve(
    bundle: TrajectoryBundle,
    k_d: int = DEFAULT_NODES,
    lam: float = DEFAULT_LAMBDA,
    mu: float = DEFAULT_MU,
    alpha: Optional[Sequence[float]] = None,
    beta: Optional[Sequence[float]] = None,
    domain: Optional[tuple[float, float]] = None,
    max_iter: int = 10_000,
) -> DiscreteCurve:
    """Minimise the curve energy with Polak-Ribiere conjugate gradient.

    Directions restart every ``k_d * d`` iterations or whenever the
    Polak-Ribiere coefficient turns negative. Each step is an Armijo
    backtracking search (c = 1e-4, factor 0.5) whose first trial comes from
    parabolic interpolation along the direction. Iteration stops when the
    gradient norm drops below 1e-8 (1 + E).
    """
    t_all, _, _ = bundle.flat()
    if domain is None:
        domain = (0.0, max(DEFAULT_HORIZON, float(t_all.max())))
    times = uniform_times(domain[0], domain[1], k_d)
    curve = DiscreteCurve(initial_nodes(times, bundle), times, lam, mu, alpha, beta)
    q = _quadratic(curve, bundle)
    hess, rhs = q.hess, q.rhs

    def value(g):
        return float(0.5 * np.sum(g * (hess @ g)) - np.sum(g * rhs) + q.const)

    x = curve.nodes.copy()
    e = value(x)
    e0 = e
    grad = hess @ x - rhs
    p = -grad
    restart = k_d * x.shape[1]
    last_step = 1.0
    it = 0
    history = [e]
    while it < max_iter:
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-8 * (1.0 + abs(e)):
            break
        slope = float(np.sum(grad * p))
        if slope >= 0:
            p, slope = -grad, -gnorm * gnorm
        # parabola through E(0), E'(0) and E(trial) gives the first trial step
        trial = last_step
        e_trial = value(x + trial * p)
        curv = e_trial - e - slope * trial
        step = -slope * trial * trial / (2.0 * curv) if curv > 0 else trial
        while True:
            e_new = value(x + step * p)
            if e_new <= e + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-30:
                break
        if not np.isfinite(e_new):
            raise FloatingPointError("non-finite energy during curve fitting")
        if e_new > e:
            # no progress along this direction; restart from steepest descent
            if np.array_equal(p, -grad):
                break
            p = -grad
            continue
        x = x + step * p
        e = e_new
        history.append(e)
        last_step = step
        new_grad = hess @ x - rhs
        it += 1
        if it % restart == 0:
            p = -new_grad
        else:
            beta_pr = max(0.0, float(np.sum(new_grad * (new_grad - grad)) / np.sum(grad * grad)))
            p = -new_grad + beta_pr * p
        grad = new_grad
    if not np.isfinite(e):
        raise FloatingPointError("non-finite energy during curve fitting")
    log.debug("fit_curve: %d iterations, energy %.6g -> %.6g", it, e0, e)
    return curve.with_nodes(x, method="ncg", iterations=it, energy=e, initial_energy=e0, energy_trace=history)


def evaluate_curve(curve: DiscreteCurve, t: float) -> np.ndarray:
    """Piecewise linear interpolation; exactly the end node at the bounds."""
    t = float(t)
    t0, t1 = curve.times[0], curve.times[-1]
    if t < t0 or t > t1:
        raise DomainError(f"time {t} is outside the curve domain [{t0}, {t1}]")
    if t == t1:
        return curve.nodes[-1].copy()
    if t == t0:
        return curve.nodes[0].copy()
    return interpolation_matrix(curve.times, [t])[0] @ curve.nodes


def velocity(curve: DiscreteCurve, t: float) -> np.ndarray:
    """Forward-difference tangent of the segment containing ``t``."""
    k = int(np.clip(np.floor((t - curve.times[0]) / curve.dt), 0, curve.times.size - 2))
    return (curve.nodes[k + 1] - curve.nodes[k]) / curve.dt
