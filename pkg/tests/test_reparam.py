import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from orbitlandscape.groups import make_rotations
from orbitlandscape.landscape import fisher_information
from orbitlandscape.reparam import ChartError, chart_eval, chart_inverse, make_chart, pullback


def fd_jacobian(chart, theta, h=1e-6):
    d = theta.size
    J = np.zeros((d, d))
    base = chart_eval(chart, theta, check=False).phi
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        plus = chart_eval(chart, theta + e, check=False).phi
        minus = chart_eval(chart, theta - e, check=False).phi
        diff = plus - minus
        # phase coordinates live on the circle
        diff = np.where(np.abs(diff) > np.pi, diff - np.sign(diff) * 2 * np.pi, diff)
        J[:, i] = diff / (2 * h)
    return J, base


def test_power_sums_example():
    pt = chart_eval(make_chart("power_sums", [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    assert np.allclose(pt.phi, [2.0, 14 / 3, 12.0], atol=1e-14)


def test_polar_at_reference():
    ref = np.array([0.6, 0.8])
    assert np.allclose(chart_eval(make_chart("polar2", ref, 3), ref).phi, [1.0, 0.0], atol=1e-15)


@pytest.mark.parametrize(
    "kind, ref",
    [
        ("polar2", [1.0, 0.3]),
        ("power_sums", [0.3, -1.2, 2.0, 0.7]),
        ("fourier_mra", [2.0, -0.5, 0.3, 1.1, -0.7]),
        ("fourier_mra", [2.86, -0.82, -0.82, 0.41, -0.82, -0.82]),
    ],
)
@pytest.mark.parametrize("seed", range(3))
def test_jacobian_and_hessians_match_fd(kind, ref, seed):
    rng = np.random.default_rng(seed)
    ref = np.asarray(ref)
    chart = make_chart(kind, ref, 3)
    theta = ref + 0.3 * rng.normal(size=ref.size)
    pt = chart_eval(chart, theta)
    J_fd, _ = fd_jacobian(chart, theta)
    assert np.linalg.norm(pt.jacobian - J_fd) <= 1e-6 * np.linalg.norm(J_fd)
    h = 1e-5
    for i in range(ref.size):
        e = np.zeros(ref.size)
        e[i] = h
        col = (chart_eval(chart, theta + e).jacobian - chart_eval(chart, theta - e).jacobian) / (2 * h)
        assert np.allclose(pt.hessians[:, :, i], col, atol=1e-6 * max(1.0, np.abs(col).max()))


def test_power_sums_jacobian_rows():
    theta = np.array([0.5, -1.0, 2.0])
    J = chart_eval(make_chart("power_sums", theta), theta).jacobian
    for ell in range(1, 4):
        assert np.allclose(J[ell - 1], ell / 3 * theta ** (ell - 1))


@pytest.mark.parametrize("kind", ["polar2", "power_sums", "fourier_mra"])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_round_trip(kind, seed):
    rng = np.random.default_rng(seed)
    d = {"polar2": 2, "power_sums": 4, "fourier_mra": 6}[kind]
    ref = rng.normal(size=d)
    theta = rng.normal(size=d)
    chart = make_chart(kind, ref, 3)
    try:
        pt = chart_eval(chart, theta)
    except ChartError:
        assume(False)
    back = chart_inverse(chart, pt.phi, theta)
    assert np.allclose(back, theta, atol=1e-8)


def test_identity_pullback():
    chart = make_chart("identity", [0.0, 0.0, 0.0])
    g, H = np.array([1.0, 2.0, 3.0]), np.diag([1.0, -2.0, 3.0])
    g_phi, H_phi = pullback(chart, [0.1, 0.2, 0.3], g, H)
    assert np.array_equal(g_phi, g)
    assert np.allclose(H_phi, H)


def test_pullback_preserves_signature_at_critical_point():
    chart = make_chart("power_sums", [0.1, 1.0, -0.7])
    rng = np.random.default_rng(0)
    Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    H = Q @ np.diag([2.0, -1.0, 0.5]) @ Q.T
    _, H_phi = pullback(chart, [0.1, 1.0, -0.7], np.zeros(3), H)
    assert (np.linalg.eigvalsh(H_phi) > 0).sum() == 2


def test_pullback_matches_path_differences():
    """Differentiate f(theta(phi)) directly in chart coordinates."""
    ref = np.array([1.0, 0.4, -0.6, 0.9, 0.2])
    chart = make_chart("fourier_mra", ref)
    A = np.random.default_rng(1).normal(size=(5, 5))
    A = A + A.T
    f = lambda th: 0.5 * th @ A @ th + np.sin(th).sum()  # noqa: E731
    theta = ref + 0.1
    g = A @ theta + np.cos(theta)
    H = A - np.diag(np.sin(theta))
    g_phi, H_phi = pullback(chart, theta, g, H)
    phi = chart_eval(chart, theta).phi
    F = lambda p: f(chart_inverse(chart, p))  # noqa: E731
    h = 1e-4
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        assert (F(phi + e) - F(phi - e)) / (2 * h) == pytest.approx(g_phi[i], rel=1e-5, abs=1e-7)
        for j in range(5):
            e2 = np.zeros(5)
            e2[j] = h
            fd = (F(phi + e + e2) - F(phi + e - e2) - F(phi - e + e2) + F(phi - e - e2)) / (4 * h * h)
            assert fd == pytest.approx(H_phi[i, j], rel=1e-5, abs=1e-5)


def test_polar_pullback_of_fisher_is_graded():
    sigma = 4.0
    F = fisher_information(make_rotations(3), [1.0, 0.0], sigma, "series")
    g_phi, H_phi = pullback(make_chart("polar2", [1.0, 0.0], 3), [1.0, 0.0], np.zeros(2), F.matrix)
    assert abs(H_phi[0, 1]) <= 1e-3 * np.sqrt(abs(H_phi[0, 0] * H_phi[1, 1]))
    assert 0.1 <= H_phi[0, 0] * sigma**4 <= 10
    assert 0.01 <= H_phi[1, 1] * sigma**6 <= 10


@pytest.mark.parametrize(
    "kind, ref, theta, match",
    [
        ("polar2", [1.0, 0.0], [0.0, 0.0], "coordinate 0"),
        ("power_sums", [1.0, 2.0, 3.0], [1.0, 2.0, 1.0], "entries 0 and 2"),
        ("fourier_mra", [1.0, 2.0, 0.5, -1.0, 0.3], [1.0, 1.0, 1.0, 1.0, 1.0], "v_1"),
        ("fourier_mra", [1.0, 1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 0.5, -1.0, 0.3], "reference"),
    ],
)
def test_out_of_domain_names_coordinate(kind, ref, theta, match):
    with pytest.raises(ChartError, match=match):
        chart_eval(make_chart(kind, ref, 3), theta)
