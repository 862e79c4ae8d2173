"""Discriminant probabilistic locally linear latent variable model.

Each training sample i has a latent point x_i in R^d and a local linear map
M_i (D x d) relating ambient and latent neighbourhood differences,
``y_j - y_i ~ M_i (x_j - x_i)``. Priors couple neighbouring latents and maps
through the within-class graph (attraction) and the between-class graph
(repulsion). Posteriors are fitted with mean-field variational EM using
diagonal Gaussians for every x_i and every row of every M_i.

Features are standardized before training; coordinates that are constant
across the training set are left out of the model and restored from the
stored mean on reconstruction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import brentq
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .graphs import SimilarityGraphs, knn_indices, laplacian
from .spine import FeatureVector, IncompatibleFeaturesError, block_indices, pairwise_distances

log = logging.getLogger(__name__)

ELBO_SLACK = 1e-6
OMEGA_FLOOR = 1e-9
OOD_FACTOR = 5.0


class NumericalError(RuntimeError):
    """Raised when variational EM produces a non-finite value or loses ELBO."""


class OutOfDistributionError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    sigma: float = 1.0
    omega_w: float = 0.3
    omega_b: float = 0.7
    latent_dim: int = 8
    max_iters: int = 100
    elbo_rel_tol: float = 1e-6

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.omega_w < 0 or self.omega_b < 0:
            raise ValueError("omega weights must be non-negative")
        if self.omega_w + self.omega_b <= 0:
            raise ValueError("at least one omega weight must be positive")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


# ---------------------------------------------------------------------------
# log densities, written term by term
# ---------------------------------------------------------------------------


def _pair_sq(a: np.ndarray) -> np.ndarray:
    """Matrix of squared Frobenius distances between a[i] and a[j]."""
    flat = a.reshape(a.shape[0], -1)
    diff = flat[:, None, :] - flat[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def log_prior_latent(X, graphs: SimilarityGraphs, sigma: float, omega_w: float = 1.0, omega_b: float = 1.0) -> float:
    """-1/2 sum_i (sigma |x_i|^2 + sum_j (omega_w Ww - omega_b Wb)_ij |x_i - x_j|^2), constants dropped."""
    X = np.asarray(X, dtype=float).reshape(graphs.n, -1)
    w = graphs.signed(omega_w, omega_b)
    return float(-0.5 * (sigma * np.sum(X * X) + np.sum(w * _pair_sq(X))))


def log_prior_maps(M, graphs: SimilarityGraphs) -> float:
    """-1/2 (|sum_i M_i|_F^2 + sum_ij (Ww - Wb)_ij |M_i - M_j|_F^2), constants dropped."""
    M = np.asarray(M, dtype=float)
    total = M.sum(axis=0)
    w = graphs.w_within - graphs.w_between
    return float(-0.5 * (np.sum(total * total) + np.sum(w * _pair_sq(M))))


def residuals(Y, X, M) -> np.ndarray:
    """Delta(i, j) = (y_i - y_j) - M_i (x_i - x_j), shape (n, n, D)."""
    Y, X, M = (np.asarray(a, dtype=float) for a in (Y, X, M))
    dy = Y[:, None, :] - Y[None, :, :]
    dx = X[:, None, :] - X[None, :, :]
    return dy - np.einsum("iDa,ija->ijD", M, dx)


def log_likelihood(Y, X, M, graphs: SimilarityGraphs, omega_w: float, omega_b: float) -> float:
    """|sum_i y_i|^2 - 1/2 sum Ww omega_w |Delta|^2 + 1/2 sum Wb omega_b |Delta|^2.

    This is the penalised likelihood as literally stated; note the between
    class term enters with a positive sign. :func:`fit` optimises a bounded
    variant in which both graphs penalise the local reconstruction residual.
    """
    Y = np.asarray(Y, dtype=float)
    r2 = np.sum(residuals(Y, X, M) ** 2, axis=-1)
    s = Y.sum(axis=0)
    return float(
        s @ s - 0.5 * omega_w * np.sum(graphs.w_within * r2) + 0.5 * omega_b * np.sum(graphs.w_between * r2)
    )


# ---------------------------------------------------------------------------
# trained model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrainedManifold:
    latent_mean: np.ndarray  # (n, d)
    latent_cov: np.ndarray  # (n, d) diagonal variances
    map_mean: np.ndarray  # (n, D_active, d)
    map_cov: np.ndarray  # (n, d) diagonal variances shared by every map row
    graphs: SimilarityGraphs
    hyper: Hyperparams
    anchors: tuple
    elbo_trace: tuple
    scale: float  # fitted common scale of the omega weights
    y_mean: np.ndarray
    y_scale: np.ndarray
    active: np.ndarray  # bool mask of modelled feature coordinates
    knn_radius: float  # median ambient distance from an anchor to its k-th neighbour
    diagnostics: dict = field(default_factory=dict)
    flexibility: dict = field(default_factory=dict)  # patient id -> flexibility ratio

    @property
    def n(self) -> int:
        return self.latent_mean.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.latent_mean.shape[1]

    @property
    def mode(self) -> str:
        return self.anchors[0].mode

    @property
    def labels(self) -> tuple:
        return tuple(a.label for a in self.anchors)

    def anchor_values(self) -> np.ndarray:
        return np.stack([a.values for a in self.anchors])

    def standardize(self, values: np.ndarray) -> np.ndarray:
        """Active standardized coordinates of raw feature rows."""
        v = np.atleast_2d(np.asarray(values, dtype=float))
        return ((v - self.y_mean) / self.y_scale)[:, self.active]

    def destandardize(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.tile(self.y_mean, (z.shape[0], 1))
        out[:, self.active] += z * self.y_scale[self.active]
        return out

    def problem(self) -> "_Problem":
        return _Problem(self.standardize(self.anchor_values()), self.graphs, self.hyper)

    def state(self) -> "_State":
        return _State(self.latent_mean, self.latent_cov, self.map_mean, self.map_cov, self.scale, self.hyper.sigma)

    def elbo(self, latent_mean: Optional[np.ndarray] = None) -> float:
        """Evidence lower bound at the stored posteriors, optionally with other latent means."""
        st = self.state()
        if latent_mean is not None:
            st = replace(st, mu=np.asarray(latent_mean, dtype=float))
        return self.problem().elbo(st)

    def with_diagnostics(self, **kw) -> "TrainedManifold":
        return replace(self, diagnostics={**self.diagnostics, **kw})


@dataclass(frozen=True, eq=False)
class _State:
    mu: np.ndarray
    u: np.ndarray
    M: np.ndarray
    v: np.ndarray
    s: float
    sigma: float


class _Problem:
    """Fixed quantities of one training problem and the exact coordinate updates."""

    def __init__(self, Y: np.ndarray, graphs: SimilarityGraphs, hyper: Hyperparams):
        self.Y = Y
        self.n, self.D = Y.shape
        self.d = hyper.latent_dim
        self.hyper = hyper
        ww, wb = graphs.w_within, graphs.w_between
        self.E = hyper.omega_w * ww + hyper.omega_b * wb
        n_comp = connected_components(csr_matrix(self.E), directed=False)[0]
        self.n_y = self.D * (self.n - n_comp)

        # The signed Laplacians are indefinite because between-class edges
        # repel. Their negative eigenvalues are clipped (to 0 for the latent
        # prior, to a small floor for the map prior) so both priors are proper
        # without adding a uniform ridge that would swamp the graph terms.
        base = 2.0 * laplacian(hyper.omega_w * ww - hyper.omega_b * wb).laplacian
        omega = np.ones((self.n, self.n)) + 2.0 * laplacian(ww - wb).laplacian
        vals, vecs = eigh(base)
        self.x_eigs = np.clip(vals, 0.0, None)
        self.x_base = (vecs * self.x_eigs) @ vecs.T
        self.x_base = 0.5 * (self.x_base + self.x_base.T)
        vals, vecs = eigh(omega)
        omega = (vecs * np.clip(vals, OMEGA_FLOOR, None)) @ vecs.T
        omega = 0.5 * (omega + omega.T)
        self.omega = omega
        self.omega_kron = np.kron(omega, np.eye(self.d))
        self.omega_logdet = float(np.linalg.slogdet(omega)[1])

        self.yy = np.einsum("iD,iD->i", Y, Y)
        dy2 = self.yy[:, None] + self.yy[None, :] - 2.0 * (Y @ Y.T)
        self.dy2 = np.where(self.E > 0, np.maximum(dy2, 0.0), 0.0)

    # -- expectations ------------------------------------------------------

    def _z(self, M: np.ndarray) -> np.ndarray:
        """Z[i, j] = M_i^T y_j, shape (n, n, d)."""
        return np.einsum("iDa,jD->ija", M, self.Y, optimize=True)

    def expected_residual(self, st: _State, Z: Optional[np.ndarray] = None) -> float:
        """sum_ij E_ij E_q |(y_i - y_j) - M_i (x_i - x_j)|^2."""
        Z = self._z(st.M) if Z is None else Z
        mu, u, M, v = st.mu, st.u, st.M, st.v
        dmu = mu[:, None, :] - mu[None, :, :]
        mtm = np.einsum("iDa,iDb->iab", M, M)
        zi = np.einsum("iia->ia", Z)
        cross = np.einsum("ija,ija->ij", zi[:, None, :] - Z, dmu)
        quad = np.einsum("ija,iab,ijb->ij", dmu, mtm, dmu)
        diag_m = np.einsum("iaa->ia", mtm)
        usum = u[:, None, :] + u[None, :, :]
        var = np.einsum("ia,ija->ij", diag_m, usum) + self.D * np.einsum("ia,ija->ij", v, dmu * dmu + usum)
        return float(np.sum(self.E * (self.dy2 - 2.0 * cross + quad + var)))

    def elbo(self, st: _State) -> float:
        mu, u, M, v = st.mu, st.u, st.M, st.v
        n, d, D = self.n, self.d, self.D
        lik = -0.5 * st.s * self.expected_residual(st) + 0.5 * self.n_y * np.log(st.s)

        lam = self.x_base + st.sigma * np.eye(n)
        prior_x = -0.5 * (np.sum(mu * (lam @ mu)) + np.sum(np.diag(lam) @ u))
        prior_x += 0.5 * d * np.sum(np.log(st.sigma + self.x_eigs))

        mf = M.reshape(n, D * d)
        prior_m = -0.5 * (np.sum(mf * (self.omega @ mf)) + D * np.sum(np.diag(self.omega) @ v))
        prior_m += 0.5 * D * d * self.omega_logdet

        entropy = 0.5 * np.sum(np.log(u)) + 0.5 * D * np.sum(np.log(v))
        return float(lik + prior_x + prior_m + entropy)

    # -- coordinate updates ------------------------------------------------

    def update_maps(self, st: _State) -> _State:
        n, d, D = self.n, self.d, self.D
        c = st.s * self.E
        mu, u = st.mu, st.u
        dmu = mu[:, None, :] - mu[None, :, :]
        G = np.einsum("ij,ija,ijb->iab", c, dmu, dmu)
        G[:, np.arange(d), np.arange(d)] += np.einsum("ij,ija->ia", c, u[:, None, :] + u[None, :, :])
        T = c[:, :, None] * dmu
        B = T.sum(axis=1)[:, :, None] * self.Y[:, None, :] - np.einsum("ija,jD->iaD", T, self.Y, optimize=True)

        P = self.omega_kron.copy()
        for i in range(n):
            P[i * d : (i + 1) * d, i * d : (i + 1) * d] += G[i]
        sol = _spd_solve(P, B.reshape(n * d, D), "map")
        M = sol.reshape(n, d, D).transpose(0, 2, 1).copy()
        v = (1.0 / np.diag(P)).reshape(n, d)
        return replace(st, M=M, v=v)

    def update_latents(self, st: _State) -> _State:
        n, d, D = self.n, self.d, self.D
        c = st.s * self.E
        A = np.einsum("iDa,iDb->iab", st.M, st.M)
        A[:, np.arange(d), np.arange(d)] += D * st.v
        Q4 = -c[:, :, None, None] * (A[:, None] + A[None, :])
        idx = np.arange(n)
        Q4[idx, idx] = -Q4.sum(axis=1)
        lam = self.x_base + st.sigma * np.eye(n)
        Q4 += lam[:, :, None, None] * np.eye(d)
        Q = Q4.transpose(0, 2, 1, 3).reshape(n * d, n * d)

        Z = self._z(st.M)
        zi = np.einsum("iia->ia", Z)
        g = c[:, :, None] * (zi[:, None, :] - Z)
        h = g.sum(axis=1) - g.sum(axis=0)
        mu = _spd_solve(Q, h.reshape(-1), "latent").reshape(n, d)
        u = (1.0 / np.diag(Q)).reshape(n, d)
        return replace(st, mu=mu, u=u)

    def update_hyper(self, st: _State) -> _State:
        s = self.n_y / self.expected_residual(st)
        sx = float(np.sum(st.mu**2) + np.sum(st.u))
        d, eigs = self.d, self.x_eigs

        def grad(log_sigma):
            return 0.5 * d * np.sum(1.0 / (np.exp(log_sigma) + eigs)) - 0.5 * sx

        hi = np.log(2.0 * d * self.n / sx + 1.0)
        lo = np.log(1e-12)
        sigma = st.sigma
        if grad(lo) > 0 > grad(hi):
            sigma = float(np.exp(brentq(grad, lo, hi, xtol=1e-14)))
        return replace(st, s=float(s), sigma=sigma)


def _spd_solve(a: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    try:
        return cho_solve(cho_factor(a, lower=True, check_finite=True), b)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} precision is not positive definite: {exc}") from exc


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _standardization(Y: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre every coordinate and scale each feature block as a whole.

    One scale per block (quaternions, translations, landmarks) keeps the
    relative sizes of coordinates inside a block, so near-constant
    coordinates that only carry measurement noise are not inflated to unit
    variance. Constant coordinates are marked inactive.
    """
    mean = Y.mean(axis=0)
    std = Y.std(axis=0)
    active = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.ones(Y.shape[1])
    for cols in block_indices(mode).values():
        cols = cols.reshape(-1)
        live = cols[active[cols]]
        if live.size:
            scale[cols] = np.sqrt(np.mean(std[live] ** 2))
    return mean, scale, active


def spectral_init(w_within: np.ndarray, d: int) -> np.ndarray:
    """Laplacian-eigenmap coordinates from the d smallest nonzero eigenvalues.

    Signs are fixed so the largest-magnitude entry of each eigenvector is
    positive, columns are scaled to unit variance.
    """
    vals, vecs = eigh(laplacian(w_within).laplacian)
    tol = 1e-9 * max(1.0, float(vals[-1]))
    keep = np.flatnonzero(vals > tol)[:d]
    if keep.size < d:
        raise ValueError(f"graph supports only {keep.size} nontrivial eigenvectors, latent_dim={d}")
    x = vecs[:, keep]
    flip = np.sign(x[np.argmax(np.abs(x), axis=0), np.arange(d)])
    x = x * flip
    x = x - x.mean(axis=0)
    return x / x.std(axis=0)


def _init_maps(Y: np.ndarray, E: np.ndarray, mu: np.ndarray) -> np.ndarray:
    dmu = mu[:, None, :] - mu[None, :, :]
    G = np.einsum("ij,ija,ijb->iab", E, dmu, dmu) + 1e-6 * np.eye(mu.shape[1])
    T = E[:, :, None] * dmu
    B = T.sum(axis=1)[:, :, None] * Y[:, None, :] - np.einsum("ija,jD->iaD", T, Y, optimize=True)
    return np.linalg.solve(G, B).transpose(0, 2, 1).copy()


def fit(features: Sequence[FeatureVector], hyper: Hyperparams, graphs: SimilarityGraphs) -> TrainedManifold:
    """Variational EM for the latent positions, local maps, sigma and the omega scale.

    Each iteration updates q(M) exactly given q(X), then q(X) exactly given
    q(M), then the hyperparameters in closed form. Every step maximises the
    ELBO over its block, so the trace is non-decreasing; a decrease beyond
    1e-6 or a non-finite value raises :class:`NumericalError`.
    """
    features = list(features)
    n = len(features)
    if graphs.n != n:
        raise ValueError("graphs were built on a different number of samples")
    if tuple(f.label for f in features) != tuple(graphs.labels):
        raise ValueError("graph labels do not match feature labels")
    if n <= hyper.latent_dim:
        raise ValueError("need more samples than latent dimensions")
    raw = np.stack([f.values for f in features])
    y_mean, y_scale, active = _standardization(raw, features[0].mode)
    with np.errstate(over="ignore", invalid="ignore"):
        Y = ((raw - y_mean) / y_scale)[:, active]
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(y_scale))):
        raise NumericalError("standardized features are not finite")
    prob = _Problem(Y, graphs, hyper)

    mu = spectral_init(graphs.w_within, hyper.latent_dim)
    u = np.full_like(mu, 1e-2)
    M = _init_maps(Y, prob.E, mu)
    st = _State(mu, u, M, np.full_like(mu, 1e-2), 1.0, hyper.sigma)
    r0 = prob.expected_residual(replace(st, u=np.zeros_like(u), v=np.zeros_like(u)))
    if not r0 > 0:
        raise NumericalError("initial reconstruction residual is zero; features carry no variation")
    st = replace(st, s=prob.n_y / r0)

    trace: list[float] = []
    for it in range(hyper.max_iters):
        st = prob.update_maps(st)
        st = prob.update_latents(st)
        st = prob.update_hyper(st)
        value = _check(prob.elbo(st), trace, it)
        trace.append(value)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < hyper.elbo_rel_tol * max(1.0, abs(trace[-1])):
            break
    # a last latent refresh leaves the latent means exactly stationary
    st = prob.update_latents(st)
    trace.append(_check(prob.elbo(st), trace, len(trace)))
    # the update keeps the mean at zero already; this removes rounding drift
    mu = st.mu - st.mu.mean(axis=0)
    log.info("fit: %d iterations, elbo %.6g, sigma %.4g, scale %.4g", len(trace), trace[-1], st.sigma, st.s)

    anchors = tuple(features)
    dist = pairwise_distances(raw, raw, features[0].mode)
    np.fill_diagonal(dist, np.inf)
    k = min(graphs.k, n - 1)
    knn_radius = float(np.median(np.sort(dist, axis=1)[:, k - 1]))
    return TrainedManifold(
        latent_mean=mu,
        latent_cov=st.u,
        map_mean=st.M,
        map_cov=st.v,
        graphs=graphs,
        hyper=replace(hyper, sigma=st.sigma),
        anchors=anchors,
        elbo_trace=tuple(trace),
        scale=st.s,
        y_mean=y_mean,
        y_scale=y_scale,
        active=active,
        knn_radius=knn_radius,
    )


def _check(value: float, trace: list, it: int) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite ELBO at iteration {it}")
    if trace and value < trace[-1] - ELBO_SLACK:
        raise NumericalError(f"ELBO decreased at iteration {it}: {trace[-1]!r} -> {value!r}")
    return value


# ---------------------------------------------------------------------------
# out-of-sample embedding and classification
# ---------------------------------------------------------------------------


def embedding_bandwidth(m: TrainedManifold, nearest: float) -> float:
    """Self-tuning ambient kernel width for attaching a query.

    The width follows the distance to the nearest anchor, clamped between a
    small floor and a third of the median kNN radius. A query that sits on an
    anchor is therefore attached almost exclusively to it, while a query far
    from every anchor receives small absolute weights and a wide posterior.
    """
    return float(np.clip(nearest, 1e-3 * m.knn_radius, m.knn_radius / 3.0))


def embed_out_of_sample(
    m: TrainedManifold, y_q: FeatureVector, *, max_iter: int = 500, tol: float = 1e-13
) -> tuple[np.ndarray, np.ndarray]:
    """Latent posterior mean and diagonal covariance of a new sample.

    The query is attached to its k nearest anchors with Gaussian kernel edge
    weights and treated as a new node of the trained graph: its latent prior
    is the within-class attraction towards the attached anchors and its map
    prior is centred on their maps. The latent point and the query's own map
    are then updated in turn while every training posterior stays fixed.

    The returned covariance shrinks with the number and closeness of the
    anchors around the query, so it can be read as a confidence in the
    embedding.
    """
    if y_q.mode != m.mode:
        raise IncompatibleFeaturesError(f"query mode {y_q.mode} differs from model mode {m.mode}")
    dist = pairwise_distances(y_q.values[None], m.anchor_values(), m.mode)[0]
    if dist.min() > OOD_FACTOR * m.knn_radius:
        raise OutOfDistributionError(
            f"query is {dist.min():.4g} from the nearest anchor, beyond {OOD_FACTOR} x the median kNN radius {m.knn_radius:.4g}"
        )
    nb = knn_indices(dist, np.arange(m.n), min(m.graphs.k, m.n))
    kappa = np.exp(-0.5 * (dist[nb] / embedding_bandwidth(m, float(dist[nb[0]]))) ** 2)
    omega = m.hyper.omega_w if m.hyper.omega_w > 0 else m.hyper.omega_b
    d, D = m.latent_dim, m.map_mean.shape[1]
    c = m.scale * omega * kappa
    yq = m.standardize(y_q.values)[0]
    dy = yq[None, :] - m.standardize(m.anchor_values()[nb])  # (k, D)
    mu_n, u_n, M_n = m.latent_mean[nb], m.latent_cov[nb], m.map_mean[nb]
    A_n = np.einsum("kDa,kDb->kab", M_n, M_n) + D * np.einsum("ka,ab->kab", m.map_cov[nb], np.eye(d))
    prior_w = 2.0 * kappa.sum()
    prior_map = 2.0 * np.einsum("k,kDa->Da", kappa, M_n)
    prior_lat = 2.0 * omega * (kappa @ mu_n)
    # the neighbours' own maps applied to y_q - y_j do not change between sweeps
    lin_n = np.einsum("k,kDa,kD->a", c, M_n, dy)
    H_n = np.einsum("k,kab->ab", c, A_n) + 2.0 * omega * kappa.sum() * np.eye(d)
    b_n = np.einsum("k,kab,kb->a", c, A_n, mu_n) + lin_n + prior_lat

    mu = kappa @ mu_n / kappa.sum()
    u = kappa @ u_n / kappa.sum()
    for _ in range(max_iter):
        dmu = mu[None, :] - mu_n
        PM = prior_w * np.eye(d) + np.einsum("k,ka,kb->ab", c, dmu, dmu) + np.diag(c @ (u[None, :] + u_n))
        Mq = np.linalg.solve(PM, (prior_map + np.einsum("k,kD,ka->Da", c, dy, dmu)).T).T
        Aq = Mq.T @ Mq + D * np.diag(1.0 / np.diag(PM))
        H = H_n + c.sum() * Aq
        new = np.linalg.solve(H, b_n + Aq @ (c @ mu_n) + Mq.T @ (c @ dy))
        u = 1.0 / np.diag(H)
        step = np.linalg.norm(new - mu)
        mu = new
        if step <= tol * (1.0 + np.linalg.norm(mu)):
            break
    if not np.all(np.isfinite(mu)):
        raise NumericalError("non-finite latent position for query")
    # The self-tuned kernel attaches a replica to its own anchor alone, which
    # would make the most certain query look weakly connected. The reported
    # variance therefore uses a kernel of fixed support (the median kNN
    # radius), evaluated at the converged latent point and query map.
    kf = np.exp(-0.5 * (3.0 * dist[nb] / m.knn_radius) ** 2)
    cf = m.scale * omega * kf
    Hf = np.einsum("k,kab->ab", cf, A_n) + cf.sum() * Aq + 2.0 * omega * kf.sum() * np.eye(d)
    return mu, np.diag(1.0 / np.diag(Hf))


def classify(m: TrainedManifold, x_q) -> tuple[str, float]:
    """k-NN vote among training latents; ties in the vote go to P."""
    x_q = np.asarray(x_q, dtype=float)
    dist = np.linalg.norm(m.latent_mean - x_q, axis=1)
    nb = knn_indices(dist, np.arange(m.n), min(m.graphs.k, m.n))
    labels = np.asarray(m.labels)
    score = float(np.mean(labels[nb] == "P"))
    return ("P" if score >= 0.5 else "NP"), score
