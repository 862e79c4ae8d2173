from dataclasses import replace

import numpy as np
import pytest

from spinemorph.dpllvm import (
    Hyperparams,
    NumericalError,
    OutOfDistributionError,
    classify,
    embed_out_of_sample,
    fit,
    log_likelihood,
    log_prior_latent,
    log_prior_maps,
    residuals,
)
from spinemorph.graphs import SimilarityGraphs, build_graphs
from spinemorph.spine import FeatureVector, feature_dim


def two_clusters(n=60, sep=40.0, seed=0, mode="shape", radius=3.0, noise=0.01):
    """Two half-circle arcs of features, far apart compared with their size.

    The midpoint of an arc's two ends lies in a gap, a full radius away
    from every sample.
    """
    rng = np.random.default_rng(seed)
    D = feature_dim(mode)
    centres = rng.normal(size=(2, D))
    centres[1] += sep / np.sqrt(D)
    basis, _ = np.linalg.qr(rng.normal(size=(D, 2)))
    feats = []
    for i in range(n):
        c = i % 2
        theta = np.pi * (i // 2) / (n // 2 - 1)
        v = centres[c] + radius * (np.cos(theta) * basis[:, 0] + np.sin(theta) * basis[:, 1])
        v = v + noise * rng.normal(size=D)
        feats.append(FeatureVector(v, mode, "P" if c else "NP", f"s{i}"))
    return feats


@pytest.fixture(scope="module")
def clusters():
    feats = two_clusters()
    graphs = build_graphs(feats, 5)
    return feats, graphs, fit(feats, Hyperparams(latent_dim=2, max_iters=150), graphs)


def pair_graph(within=1.0, between=0.0):
    w = np.array([[0.0, within], [within, 0.0]])
    b = np.array([[0.0, between], [between, 0.0]])
    return SimilarityGraphs(w, b, 1, ("P", "P"))


def test_log_prior_latent_examples():
    g = pair_graph()
    assert log_prior_latent(np.zeros((2, 1)), g, 1.0) == 0.0
    assert log_prior_latent(np.array([[0.0], [1.0]]), g, 1.0) == pytest.approx(-1.5)
    gb = SimilarityGraphs(np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]]), 1, ("P", "NP"))
    x = np.array([[0.0], [1.0]])
    assert log_prior_latent(x, gb, 1.0) - log_prior_latent(x, gb, 1.0, omega_b=0.0) == pytest.approx(+1.0)
    assert log_prior_latent(x, g, 1.0) - log_prior_latent(x, g, 1.0, omega_w=0.0) == pytest.approx(-1.0)


def test_log_prior_maps_examples():
    g = pair_graph()
    assert log_prior_maps(np.zeros((2, 3, 2)), g) == 0.0
    m = np.ones((3, 4, 2))
    g3 = SimilarityGraphs(np.zeros((3, 3)), np.zeros((3, 3)), 1, ("P", "P", "P"))
    assert log_prior_maps(m, g3) == pytest.approx(-0.5 * np.sum((3 * m[0]) ** 2))
    a = np.zeros((2, 2, 2))
    a[1, 0, 0] = 1.0
    # sum term -1/2 * 1 and the symmetric edge term -1/2 * 2 * 1
    assert log_prior_maps(a, g) == pytest.approx(-0.5 - 1.0)


def test_log_likelihood_affine_data_leaves_only_centroid_term(rng):
    X = rng.normal(size=(5, 2))
    A = rng.normal(size=(3, 2))
    Y = X @ A.T + 7.0
    M = np.tile(A, (5, 1, 1))
    w = np.ones((5, 5)) - np.eye(5)
    g = SimilarityGraphs(w, np.zeros((5, 5)), 2, ("P",) * 5)
    assert log_likelihood(Y, X, M, g, 0.3, 0.7) == pytest.approx(np.sum(Y.sum(axis=0) ** 2), rel=1e-12)


def test_log_likelihood_matches_double_loop(rng):
    Y, X, M = rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), rng.normal(size=(3, 4, 2))
    ww = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    wb = np.array([[0, 0, 1], [0, 0, 0], [1, 0, 0]], dtype=float)
    g = SimilarityGraphs(ww, wb, 1, ("P", "P", "NP"))
    expect = np.sum(Y.sum(axis=0) ** 2)
    for i in range(3):
        for j in range(3):
            delta = (Y[i] - Y[j]) - M[i] @ (X[i] - X[j])
            expect += -0.5 * 0.3 * ww[i, j] * delta @ delta + 0.5 * 0.7 * wb[i, j] * delta @ delta
    assert log_likelihood(Y, X, M, g, 0.3, 0.7) == pytest.approx(expect, rel=1e-12)
    np.testing.assert_allclose(residuals(Y, X, M)[0, 1], (Y[0] - Y[1]) - M[0] @ (X[0] - X[1]))


def test_log_likelihood_is_linear_in_omega_w(rng):
    Y, X, M = rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), rng.normal(size=(3, 4, 2))
    g = SimilarityGraphs(np.ones((3, 3)) - np.eye(3), np.zeros((3, 3)), 1, ("P",) * 3)
    base = log_likelihood(Y, X, M, g, 0.0, 0.0)
    one = log_likelihood(Y, X, M, g, 0.3, 0.0) - base
    two = log_likelihood(Y, X, M, g, 0.6, 0.0) - base
    assert two == pytest.approx(2.0 * one, rel=1e-12)


def test_hyperparameter_validation():
    for kw in (dict(sigma=0.0), dict(omega_w=-1.0), dict(latent_dim=0), dict(omega_w=0.0, omega_b=0.0)):
        with pytest.raises(ValueError):
            Hyperparams(**kw)


def test_fit_elbo_is_monotone_and_latents_centred(clusters):
    _, _, m = clusters
    trace = np.array(m.elbo_trace)
    assert np.all(np.diff(trace) >= -1e-6)
    np.testing.assert_allclose(m.latent_mean.mean(axis=0), 0.0, atol=1e-9)
    assert m.latent_mean.shape == (60, 2) and m.latent_cov.shape == (60, 2)


def test_fit_separates_two_clusters(clusters):
    _, _, m = clusters
    lab = np.asarray(m.labels)
    d = np.linalg.norm(m.latent_mean[:, None] - m.latent_mean[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert np.mean(lab[np.argmin(d, axis=1)] == lab) >= 0.95


def test_elbo_is_stationary_in_latent_means(clusters):
    _, _, m = clusters
    mu = m.latent_mean
    h = 1e-5
    grads = []
    for i in range(0, m.n, 7):
        for a in range(m.latent_dim):
            p, q = mu.copy(), mu.copy()
            p[i, a] += h
            q[i, a] -= h
            grads.append((m.elbo(p) - m.elbo(q)) / (2 * h))
    assert np.max(np.abs(grads)) < 1e-4


def test_fit_is_permutation_equivariant(clusters):
    feats, graphs, m = clusters
    perm = np.random.default_rng(1).permutation(len(feats))
    m2 = fit([feats[i] for i in perm], m.hyper.__class__(latent_dim=2, max_iters=150), graphs.permuted(perm))
    np.testing.assert_allclose(m2.latent_mean, m.latent_mean[perm], atol=1e-6)


def test_translating_features_leaves_latents_unchanged(clusters):
    feats, graphs, m = clusters
    shift = np.random.default_rng(2).normal(size=feats[0].values.size) * 10.0
    moved = [FeatureVector(f.values + shift, f.mode, f.label, f.patient_id) for f in feats]
    m2 = fit(moved, Hyperparams(latent_dim=2, max_iters=150), graphs)
    np.testing.assert_allclose(m2.latent_mean, m.latent_mean, atol=1e-6)


def test_fit_rejects_mismatched_graphs(clusters):
    feats, graphs, _ = clusters
    with pytest.raises(ValueError):
        fit(feats[:-1], Hyperparams(latent_dim=2), graphs)


def test_self_embedding_lands_on_stored_latent(clusters):
    _, _, m = clusters
    lab = np.asarray(m.labels)
    d = np.linalg.norm(m.latent_mean[:, None] - m.latent_mean[None], axis=-1)
    d[lab[:, None] != lab[None, :]] = np.inf
    np.fill_diagonal(d, np.inf)
    tol = 0.05 * np.median(d.min(axis=1))
    hits = [np.linalg.norm(embed_out_of_sample(m, a)[0] - m.latent_mean[i]) <= tol for i, a in enumerate(m.anchors)]
    assert np.mean(hits) >= 0.95


def test_replica_is_more_certain_than_a_midpoint(clusters):
    _, _, m = clusters
    a, b = m.anchors[0], m.anchors[-2]  # the two ends of one arc
    mid = FeatureVector(0.5 * (a.values + b.values), a.mode)
    _, cov_rep = embed_out_of_sample(m, a)
    _, cov_mid = embed_out_of_sample(m, mid)
    assert np.all(np.diag(cov_rep) < np.diag(cov_mid))


def test_out_of_distribution_query_is_rejected(clusters):
    _, _, m = clusters
    far = FeatureVector(100.0 * (m.anchors[0].values + 50.0), m.mode)
    with pytest.raises(OutOfDistributionError):
        embed_out_of_sample(m, far)


def test_classify_pure_neighbourhood_and_tie(clusters):
    _, _, m = clusters
    p = int(np.flatnonzero(np.asarray(m.labels) == "P")[0])
    label, score = classify(m, m.latent_mean[p])
    assert (label, score) == ("P", 1.0)
    # two anchors, k=2: the midpoint gets one vote each and the tie goes to P
    small = replace(m, latent_mean=np.array([[0.0], [2.0]]), anchors=m.anchors[:2],
                    graphs=SimilarityGraphs(np.zeros((2, 2)), np.zeros((2, 2)), 2, m.labels[:2]))
    assert classify(small, [1.0]) == ("P", 0.5)


def test_classify_depends_only_on_distance_ranks(clusters):
    _, _, m = clusters
    rng = np.random.default_rng(3)
    queries = rng.normal(size=(20, 2)) * m.latent_mean.std(axis=0)
    scaled = replace(m, latent_mean=m.latent_mean * 3.7)
    for q in queries:
        assert classify(m, q) == classify(scaled, q * 3.7)


def test_non_finite_features_raise_numerical_error():
    feats = two_clusters(n=24)
    bad = feats[:-1] + [FeatureVector(np.full(feats[0].values.size, 1e300), "shape", feats[-1].label)]
    graphs = build_graphs(feats, 3)
    with pytest.raises((NumericalError, FloatingPointError, ValueError)):
        with np.errstate(all="ignore"):
            fit(bad, Hyperparams(latent_dim=2, max_iters=5), graphs)
