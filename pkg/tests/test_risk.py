import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_grad, naive_posterior_cov, naive_value, random_model
from orbitlandscape.groups import GroupAction, make_cyclic, make_rotations, make_symmetric, make_trivial
from orbitlandscape.model import Dataset, sample_dataset
from orbitlandscape.risk import (
    RiskError,
    RiskModel,
    chunked_reduce,
    pairwise_sum,
    population_model,
    population_risk,
    posterior_weights,
)

SIGN = GroupAction("sign", np.array([[[1.0]], [[-1.0]]]))


def test_posterior_uniform_at_zero():
    w = posterior_weights(make_rotations(5), np.zeros(2), np.array([3.0, -1.0]), 1.0)
    assert np.allclose(w, 0.2, atol=1e-15)


def test_posterior_concentrates_at_low_noise():
    G = make_rotations(3)
    y = G.elements[2] @ [1.0, 0.0]
    assert posterior_weights(G, np.array([1.0, 0.0]), y, 0.01)[2] >= 1 - 1e-6


def test_posterior_logistic():
    sigma = 0.7
    w = posterior_weights(SIGN, np.array([1.0]), np.array([sigma**2 * 0.5]), sigma)
    # softmax of (+0.5, -0.5) is the logistic function at 1
    assert w == pytest.approx([1 / (1 + math.exp(-1)), 1 / (1 + math.exp(1))], abs=1e-12)
    assert w == pytest.approx([0.7311, 0.2689], abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=2), st.lists(st.floats(-30, 30), min_size=2, max_size=2), st.floats(0.05, 10))
def test_posterior_is_a_probability_vector(theta, y, sigma):
    w = posterior_weights(make_rotations(4), np.array(theta), np.array(y), sigma)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-12


def test_value_matches_naive():
    model, _ = random_model(1, make_cyclic(4), n=3000, sigma=1.3)
    theta = np.array([0.3, -0.2, 1.1, 0.5])
    assert model.value(theta) == pytest.approx(naive_value(model.group, model.data.Y, 1.3, theta), rel=1e-13)


def test_trivial_group_gaussian():
    ds = sample_dataset(make_trivial(3), [1.0, 2.0, 3.0], 2.0, 400, 0)
    model = RiskModel(make_trivial(3), ds)
    theta = np.array([0.5, 0.0, -1.0])
    res = model.evaluate(theta, 2)
    assert np.allclose(res.grad, (theta - ds.Y.mean(axis=0)) / 4.0, atol=1e-14)
    assert np.allclose(res.hess, np.eye(3) / 4.0, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("sigma", [0.5, 1.0, 4.0])
def test_derivatives_against_finite_differences(seed, sigma):
    model, _ = random_model(seed, make_rotations(3), n=100, sigma=sigma)
    theta = np.random.default_rng(seed + 100).normal(size=2)
    res = model.evaluate(theta, 3)
    h = 1e-5 * max(1.0, np.linalg.norm(theta))
    g_fd = fd_grad(model.value, theta, h)
    assert np.linalg.norm(res.grad - g_fd) <= 1e-6 * np.linalg.norm(g_fd)
    H_fd = np.stack([fd_grad(lambda t: model.evaluate(t, 1).grad[i], theta, h) for i in range(2)])
    assert np.linalg.norm(res.hess - H_fd) <= 1e-4 * np.linalg.norm(H_fd)
    # Differencing the Hessian itself loses the signal when the posterior is nearly a
    # point mass (Hessian ~ Id/sigma^2 while the tensor is tiny), so difference its
    # theta-dependent part -cov/sigma^4; the identity is checked exactly below.
    cov = lambda t: -naive_posterior_cov(model.group, model.data.Y, sigma, t) / sigma**4  # noqa: E731
    T_fd = np.stack([np.stack([fd_grad(lambda t: cov(t)[i, j], theta, h) for j in range(2)]) for i in range(2)])
    assert np.linalg.norm(res.tensors[3] - T_fd) <= 1e-4 * np.linalg.norm(T_fd)


def test_fourth_tensor_against_finite_differences():
    model, _ = random_model(9, make_symmetric(3), n=100, sigma=1.0)
    theta = np.array([0.4, -0.7, 1.2])
    res = model.evaluate(theta, 4)
    h = 1e-4
    T_fd = np.zeros((3,) * 4)
    for i, j, k in np.ndindex(3, 3, 3):
        T_fd[i, j, k] = fd_grad(lambda t: model.evaluate(t, 3).tensors[3][i, j, k], theta, h)
    assert np.linalg.norm(res.tensors[4] - T_fd) <= 1e-4 * np.linalg.norm(T_fd)


def test_hessian_identity_from_posterior_covariance():
    model, _ = random_model(4, make_cyclic(3), n=50, sigma=0.8)
    theta = np.array([0.2, 1.0, -0.6])
    s2 = 0.8**2
    expected = np.eye(3) / s2 - naive_posterior_cov(model.group, model.data.Y, 0.8, theta) / s2**2
    res = model.evaluate(theta, 2)
    assert np.abs(res.hess - expected).max() <= 1e-12
    assert np.abs(res.hess - res.hess.T).max() <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 5))
def test_group_invariance(seed, k):
    model, _ = random_model(seed, make_cyclic(6), n=60, sigma=1.5)
    theta = np.random.default_rng(seed).normal(size=6) * 2
    a = model.value(theta)
    b = model.value(model.group.elements[k] @ theta)
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_thread_and_chunk_invariance():
    G = make_rotations(3)
    ds = sample_dataset(G, [1.0, 0.0], 2.0, 5000, 3)
    theta = np.array([0.3, 0.9])
    ref = RiskModel(G, ds, threads=1).evaluate(theta, 3)
    for threads in (2, 8):
        other = RiskModel(G, ds, threads=threads).evaluate(theta, 3)
        assert other.value == ref.value
        assert np.array_equal(other.grad, ref.grad)
        assert np.array_equal(other.hess, ref.hess)
        assert np.array_equal(other.tensors[3], ref.tensors[3])


def test_pairwise_sum_order():
    assert pairwise_sum([1, 2, 3, 4, 5]) == 15
    out = chunked_reduce(10, lambda s, e: (e - s,), threads=3, chunk=3)
    assert out == (10,)


def test_order_cap_and_dimension_checks():
    model, _ = random_model(0)
    with pytest.raises(RiskError):
        model.evaluate([0.0, 0.0], 5)
    with pytest.raises(RiskError):
        model.evaluate([0.0, 0.0, 0.0], 1)
    with pytest.raises(RiskError):
        RiskModel(make_cyclic(3), model.data)


def test_population_minimized_on_orbit():
    G = make_rotations(3)
    model = population_model(G, [1.0, 0.0], 1.0, 200_000, 0)
    best = model.value(np.array([1.0, 0.0]))
    grid = np.linspace(-2, 2, 17)
    for x in grid:
        for y in grid:
            th = np.array([x, y])
            if min(np.linalg.norm(G.act([1.0, 0.0]) - th, axis=1)) < 0.3:
                continue
            assert best <= model.value(th) - 1e-4


def test_population_crn_invariance_and_stationarity():
    G = make_rotations(3)
    res = population_risk(G, [1.0, 0.0], 1.0, [1.0, 0.0], N=200_000, seed=1, order=1)
    rot = population_risk(G, [1.0, 0.0], 1.0, G.elements[1] @ [1.0, 0.0], N=200_000, seed=1, order=0)
    assert abs(res.value - rot.value) <= 1e-10
    assert np.all(np.abs(res.grad) <= 3 * res.stderr["grad"])


def test_quadrature_close_to_monte_carlo():
    G = make_rotations(3)
    theta = np.array([0.7, 0.4])
    mc = population_risk(G, [1.0, 0.0], 1.0, theta, N=200_000, seed=2, order=0)
    quad = population_risk(G, [1.0, 0.0], 1.0, theta, order=0, method="quadrature")
    assert abs(mc.value - quad.value) <= 4 * mc.stderr["value"]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 5), st.floats(0.1, 50))
def test_gradient_norm_inequality(seed, sigma, scale):
    model, _ = random_model(seed, make_cyclic(3), n=30, sigma=sigma)
    theta = np.random.default_rng(seed).normal(size=3) * scale
    grad = model.evaluate(theta, 1).grad
    bound = np.linalg.norm(theta) - np.linalg.norm(model.data.Y, axis=1).mean()
    assert sigma**2 * np.linalg.norm(grad) >= bound - 1e-9 * max(1.0, abs(bound))
