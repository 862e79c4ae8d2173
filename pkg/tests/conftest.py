"""Shared fixtures and random generators for the test suite."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spinemorph.cohort import CohortConfig, generate_cohort
from spinemorph.se3 import RigidTransform, random_rotation
from spinemorph.spine import LEVELS, ArticulatedSpine, VertebraModel

settings.register_profile("spinemorph", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("spinemorph")


def random_spine(rng: np.random.Generator, max_angle: float = 0.3, spacing: float = 30.0) -> ArticulatedSpine:
    """Spine with small random relative rotations, roughly cranial translations and random landmarks."""
    verts = tuple(VertebraModel.centered(level, rng.normal(scale=15.0, size=(6, 3))) for level in LEVELS)
    ts = []
    for k in range(len(LEVELS)):
        t = rng.normal(scale=2.0, size=3) + (np.array([0.0, 0.0, spacing]) if k else rng.normal(scale=20.0, size=3))
        ts.append(RigidTransform(random_rotation(rng, max_angle), t))
    return ArticulatedSpine(verts, tuple(ts))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(CohortConfig(n_patients=30, seed=7))


def toy_manifold(latents, labels=None, patient_ids=None, times=None, mode="shape", seed=0, k=3, flexibility=None):
    """Hand-built model whose ambient features are an exact linear image of ``latents``.

    Features are y_j = A x_j + b with an orthonormal A, so ambient and latent
    distances agree and every local linear map equals A. Standardisation is
    the identity.
    """
    from spinemorph.dpllvm import Hyperparams, TrainedManifold
    from spinemorph.graphs import SimilarityGraphs
    from spinemorph.spine import FeatureVector, feature_dim

    x = np.atleast_2d(np.asarray(latents, dtype=float))
    n, d = x.shape
    D = feature_dim(mode)
    r = np.random.default_rng(seed)
    a, _ = np.linalg.qr(r.normal(size=(D, d)))
    b = r.normal(size=D)
    labels = labels or ["P"] * n
    patient_ids = patient_ids or [f"a{i}" for i in range(n)]
    times = times or [0.0] * n
    anchors = tuple(FeatureVector(a @ x[i] + b, mode, labels[i], patient_ids[i], float(times[i])) for i in range(n))
    graphs = SimilarityGraphs(np.zeros((n, n)), np.zeros((n, n)), k, tuple(labels))
    m = TrainedManifold(
        latent_mean=x,
        latent_cov=np.full((n, d), 1e-3),
        map_mean=np.repeat(a[None], n, axis=0),
        map_cov=np.full((n, d), 1e-3),
        graphs=graphs,
        hyper=Hyperparams(latent_dim=d),
        anchors=anchors,
        elbo_trace=(0.0,),
        scale=1.0,
        y_mean=np.zeros(D),
        y_scale=np.ones(D),
        active=np.ones(D, dtype=bool),
        knn_radius=1.0,
        flexibility=dict(flexibility or {}),
    )
    return m, a, b
