import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import toy_manifold
from spinemorph.regression import (
    DiscreteCurve,
    DomainError,
    EmptyBundleError,
    TrajectoryBundle,
    build_bundle,
    difference_operators,
    direct_solve,
    energy,
    energy_gradient,
    evaluate_curve,
    fit_curve,
    interpolation_matrix,
    uniform_times,
    velocity,
)


def bundle_from(times, points, weights=None):
    points = [np.asarray(p, dtype=float).reshape(len(t), -1) for t, p in zip(times, points)]
    k = len(times)
    w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
    x_q = points[0][0]
    return TrajectoryBundle(tuple(np.asarray(t, dtype=float) for t in times), tuple(points), w, x_q,
                            np.array([p[0] for p in points]))


def random_bundle(r, d, k_traj=4, horizon=36.0):
    times, points = [], []
    x_q = r.normal(size=d)
    for _ in range(k_traj):
        n = int(r.integers(2, 6))
        t = np.sort(r.choice(np.arange(1, int(horizon)), size=n - 1, replace=False)).astype(float)
        t = np.concatenate([[0.0], t])
        drift = r.normal(size=d)
        pts = x_q + np.outer(t / horizon, drift) + 0.05 * r.normal(size=(n, d))
        pts[0] = x_q
        times.append(t)
        points.append(pts)
    w = r.random(k_traj) + 0.1
    return bundle_from(times, points, w / w.sum())


def test_hand_computed_three_node_energy():
    curve = DiscreteCurve([[0.0], [1.0], [3.0]], [0.0, 1.0, 2.0], lam=1.0, mu=1.0)
    bundle = bundle_from([[0.0, 0.5]], [[[0.0], [0.0]]])
    # misfit: gamma(0)=0 and gamma(0.5)=0.5 -> 0.125; velocity 1, 2 -> 2.5; acceleration 1 -> 0.5
    assert energy(curve, bundle) == pytest.approx(3.125, abs=1e-12)


def test_energy_vanishes_on_a_curve_through_constant_data():
    bundle = bundle_from([[0.0, 6.0, 18.0], [0.0, 12.0]], [[[1.0, 2.0]] * 3, [[1.0, 2.0]] * 2])
    curve = DiscreteCurve(np.tile([1.0, 2.0], (5, 1)), uniform_times(0, 24, 5))
    assert energy(curve, bundle) == 0.0


def test_operators():
    d1, d2 = difference_operators(4, 2.0)
    g = np.array([0.0, 2.0, 6.0, 12.0])
    np.testing.assert_allclose(d1 @ g, [1.0, 2.0, 3.0])
    np.testing.assert_allclose(d2 @ g, [0.5, 0.5])
    b = interpolation_matrix(np.array([0.0, 1.0, 2.0]), [0.0, 0.25, 2.0])
    np.testing.assert_allclose(b, [[1, 0, 0], [0.75, 0.25, 0], [0, 0, 1]])
    with pytest.raises(DomainError):
        interpolation_matrix(np.array([0.0, 1.0, 2.0]), [2.5])


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    bundle = random_bundle(r, 3)
    curve = DiscreteCurve(r.normal(size=(7, 3)), uniform_times(0, 36, 7), lam=0.3, mu=2.0,
                          alpha=r.random(6) + 0.5, beta=r.random(5) + 0.5)
    g = energy_gradient(curve, bundle)
    fd = np.zeros_like(g)
    h = 1e-6
    for idx in np.ndindex(*g.shape):
        p, q = curve.nodes.copy(), curve.nodes.copy()
        p[idx] += h
        q[idx] -= h
        fd[idx] = (energy(curve.with_nodes(p), bundle) - energy(curve.with_nodes(q), bundle)) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(g) < 1e-5


def test_misfit_gradient_points_towards_the_data():
    bundle = bundle_from([[0.0, 12.0, 24.0]], [[[0.0], [1.0], [2.0]]])
    curve = DiscreteCurve(np.full((3, 1), 5.0), [0.0, 12.0, 24.0], lam=0.0, mu=0.0)
    g = energy_gradient(curve, bundle)
    assert np.all(g > 0)  # the curve is above every data point


@pytest.mark.parametrize("seed", range(20))
def test_conjugate_gradient_matches_direct_solve(seed):
    r = np.random.default_rng(seed)
    d = int(r.integers(1, 9))
    k_d = int(r.integers(5, 26))
    bundle = random_bundle(r, d)
    lam, mu = float(r.uniform(0.01, 1.0)), float(r.uniform(0.1, 10.0))
    cg = fit_curve(bundle, k_d, lam, mu)
    ref = direct_solve(cg, bundle)
    assert np.abs(cg.nodes - ref.nodes).max() < 1e-6
    assert cg.info["energy"] <= cg.info["initial_energy"]


def test_interpolates_when_unregularised():
    t = uniform_times(0, 24, 5)
    pts = np.array([[0.0], [1.0], [-1.0], [4.0], [2.0]])
    bundle = bundle_from([t], [pts])
    curve = fit_curve(bundle, 5, lam=0.0, mu=0.0, domain=(0.0, 24.0))
    np.testing.assert_allclose(curve.nodes, pts, atol=1e-8)


def test_collinear_data_gives_a_curve_on_the_line():
    r = np.random.default_rng(1)
    direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    times, points = [], []
    for _ in range(3):
        t = np.array([0.0, 6.0, 12.0, 24.0])
        s = t / 12.0 + 0.1 * r.normal(size=4)
        s[0] = 0.0
        times.append(t)
        points.append(np.outer(s, direction))
    curve = fit_curve(bundle_from(times, points), 13, lam=0.1, mu=1e4)
    off_line = curve.nodes - np.outer(curve.nodes @ direction, direction)
    assert np.abs(off_line).max() < 1e-6


def test_large_acceleration_penalty_straightens_the_curve():
    r = np.random.default_rng(2)
    curve = fit_curve(random_bundle(r, 2), 15, lam=0.1, mu=1e8)
    acc = curve.nodes[2:] - 2 * curve.nodes[1:-1] + curve.nodes[:-2]
    assert np.abs(acc).max() < 1e-4


def test_evaluate_curve_formula_and_bounds():
    curve = DiscreteCurve([[0.0, 0.0], [2.0, 1.0], [2.0, 5.0]], [0.0, 10.0, 20.0])
    np.testing.assert_allclose(evaluate_curve(curve, 5.0), [1.0, 0.5])
    np.testing.assert_allclose(evaluate_curve(curve, 17.5), [2.0, 4.0])
    np.testing.assert_array_equal(evaluate_curve(curve, 20.0), [2.0, 5.0])
    np.testing.assert_allclose(velocity(curve, 0.0), [0.2, 0.1])
    with pytest.raises(DomainError):
        evaluate_curve(curve, 20.5)


def test_translation_equivariance():
    r = np.random.default_rng(3)
    bundle = random_bundle(r, 3)
    c = np.array([5.0, -1.0, 2.0])
    moved = bundle_from(bundle.times, [p + c for p in bundle.points], bundle.weights)
    a = fit_curve(bundle, 9)
    b = fit_curve(moved, 9)
    np.testing.assert_allclose(b.nodes, a.nodes + c, atol=1e-6)


def test_curve_validation():
    with pytest.raises(ValueError):
        DiscreteCurve([[0.0], [1.0]], [0.0, 1.0])
    with pytest.raises(ValueError):
        DiscreteCurve([[0.0], [1.0], [2.0]], [0.0, 1.0, 3.0])
    with pytest.raises(ValueError):
        bundle_from([[0.0, 1.0]], [[[0.0], [1.0]]], weights=[0.5])


def test_bundle_shifts_baselines_and_weights_equidistant_neighbours():
    lat = np.array([[1.0, 0.0], [1.5, 0.5], [-1.0, 0.0], [-1.5, 1.0], [0.0, 9.0]])
    pids = ["a", "a", "b", "b", "c"]
    m, _, _ = toy_manifold(lat, patient_ids=pids, times=[0.0, 12.0, 0.0, 6.0, 0.0])
    x_q = np.array([0.0, 0.0])
    with pytest.warns(RuntimeWarning, match="'c'"):
        bundle = build_bundle(m, x_q, ["a", "b", "c"])
    assert bundle.patient_ids == ("a", "b")
    np.testing.assert_allclose(bundle.weights, [0.5, 0.5])
    for pts in bundle.points:
        np.testing.assert_array_equal(pts[0], x_q)
    np.testing.assert_allclose(bundle.points[0][1], [0.5, 0.5])
    np.testing.assert_allclose(bundle.times[1], [0.0, 6.0])
    with pytest.raises(EmptyBundleError), pytest.warns(RuntimeWarning):
        build_bundle(m, x_q, ["c"])
