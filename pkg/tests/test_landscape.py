import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitlandscape.groups import (
    make_cyclic,
    make_rotations,
    make_symmetric,
    make_trivial,
    orbit_distance,
)
from orbitlandscape.landscape import (
    FisherResult,
    LandscapeError,
    basin_fractions,
    classify,
    clipped_newton_step,
    find_critical_points,
    fisher_information,
    graded_spectrum,
    match_orbit,
    newton_polish,
    plugin_variance,
    pseudo_minimizer_check,
    start_points,
    survey_config,
)
from orbitlandscape.model import sample_dataset
from orbitlandscape.mra import critical_family, example_theta_star, theta_from_phase
from orbitlandscape.reparam import make_chart
from orbitlandscape.risk import RiskModel

THETA_STAR = np.array([1.0, 0.0])


@pytest.fixture(scope="module")
def benign_model():
    G = make_rotations(3)
    return RiskModel(G, sample_dataset(G, THETA_STAR, 4.0, 100_000, 0))


@pytest.fixture(scope="module")
def benign_survey(benign_model):
    return find_critical_points(benign_model, 8, 0, orbits={"theta_star": THETA_STAR})


def _fisher_from(values):
    vals = np.asarray(values, dtype=float)
    return FisherResult(np.diag(vals), np.sort(vals), np.eye(len(vals)), "test", 1.0)


# Fisher information ---------------------------------------------------------------


def test_low_noise_fisher_is_isotropic():
    F = fisher_information(make_rotations(3), THETA_STAR, 0.1, "monte_carlo", N=200_000, seed=0)
    assert np.linalg.norm(0.1**2 * F.matrix - np.eye(2), 2) <= 0.01


@pytest.mark.parametrize("sigma", [4.0, 6.0])
def test_monte_carlo_and_series_fisher_agree(sigma):
    G = make_rotations(3)
    mc = fisher_information(G, THETA_STAR, sigma, "monte_carlo", N=400_000, seed=0)
    se = fisher_information(G, THETA_STAR, sigma, "series")
    assert np.all(np.abs(mc.matrix - se.matrix) <= 3 * mc.stderr)


def test_series_fisher_band_scaling():
    G = make_rotations(3)
    lo = fisher_information(G, THETA_STAR, 4.0, "series").eigvals
    hi = fisher_information(G, THETA_STAR, 8.0, "series").eigvals
    ratio = hi / lo
    # ascending order: the phase eigenvalue first, the radial one second
    assert ratio[0] == pytest.approx(2.0**-6, rel=0.3)
    assert ratio[1] == pytest.approx(2.0**-4, rel=0.3)


def test_fisher_is_symmetric_with_ascending_eigenvalues():
    F = fisher_information(make_cyclic(5), np.array([1.0, 0.2, -0.4, 0.7, -0.1]), 6.0, "series")
    np.testing.assert_array_equal(F.matrix, F.matrix.T)
    assert np.all(np.diff(F.eigvals) >= 0)
    assert set(F.to_record()) == {"method", "sigma", "matrix", "eigvals"}


@pytest.mark.parametrize(
    "G, theta",
    [(make_rotations(3), [0.0, 0.0]), (make_cyclic(4), [1.0, 1.0, 1.0, 1.0]), (make_symmetric(3), [0.5, 0.5, 1.0])],
)
def test_degenerate_orbit_rejected(G, theta):
    with pytest.raises(LandscapeError, match="coinciding"):
        fisher_information(G, theta, 4.0, "series")


def test_unknown_fisher_method():
    with pytest.raises(LandscapeError, match="unknown"):
        fisher_information(make_rotations(3), THETA_STAR, 4.0, "bootstrap")


# Band reports ----------------------------------------------------------------------


def test_trivial_group_is_one_band():
    sigma = 2.0
    F = fisher_information(make_trivial(3), [0.3, -1.0, 2.0], sigma, "monte_carlo", N=1000)
    rep = graded_spectrum(F, sigma, [3])
    assert len(rep.bands) == 1 and rep.resolved
    np.testing.assert_allclose(rep.bands[0].eigvals, 1 / sigma**2, rtol=1e-12)


@pytest.mark.parametrize(
    "G, theta, dims",
    [
        (make_cyclic(5), [1.0, 0.2, -0.4, 0.7, -0.1], [1, 2, 2]),
        (make_symmetric(3), [1.0, -0.3, 0.5], [1, 1, 1]),
    ],
)
def test_graded_bands_resolved_at_high_noise(G, theta, dims):
    sigma = 8.0
    rep = graded_spectrum(fisher_information(G, theta, sigma, "series"), sigma, dims)
    assert rep.resolved
    assert [b.dim for b in rep.bands] == dims


def test_band_report_flags_wide_spread():
    rep = graded_spectrum(_fisher_from([1.0, 200.0]), 1.0, [2])
    assert not rep.resolved


def test_band_dims_must_sum_to_dimension():
    with pytest.raises(LandscapeError, match="sum"):
        graded_spectrum(_fisher_from([1.0, 2.0, 3.0]), 1.0, [1, 1])


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1e3), min_size=4, max_size=4),
    st.permutations(range(4)),
)
def test_band_report_is_permutation_stable(vals, perm):
    vals = np.array(vals)
    a = graded_spectrum(_fisher_from(vals), 3.0, [1, 2, 1]).to_record()
    b = graded_spectrum(_fisher_from(vals[list(perm)]), 3.0, [1, 2, 1]).to_record()
    assert a == b


# Plug-in variance ------------------------------------------------------------------


def test_plugin_variance_scales_as_sigma_four():
    G = make_rotations(3)
    v4 = plugin_variance(fisher_information(G, THETA_STAR, 4.0, "series"), THETA_STAR)
    v8 = plugin_variance(fisher_information(G, THETA_STAR, 8.0, "series"), THETA_STAR)
    assert v8 / v4 == pytest.approx(16.0, rel=0.3)


def test_plugin_variance_zero_gradient():
    F = fisher_information(make_rotations(3), THETA_STAR, 4.0, "series")
    assert plugin_variance(F, [0.0, 0.0]) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(0.2, 5.0))
@settings(max_examples=30, deadline=None)
def test_plugin_variance_trivial_group(grad, sigma):
    F = fisher_information(make_trivial(3), [0.3, -1.0, 2.0], sigma, "monte_carlo", N=1000)
    grad = np.array(grad)
    assert plugin_variance(F, grad) == pytest.approx(sigma**2 * grad @ grad, rel=1e-10, abs=1e-300)


def test_plugin_variance_singular():
    with pytest.raises(LandscapeError, match="positive definite"):
        plugin_variance(_fisher_from([0.0, 1.0]), [1.0, 1.0])


# Pseudo-local minimizers -----------------------------------------------------------


def test_pseudo_minimizer_rotations_true_signal():
    chart = make_chart("polar2", THETA_STAR, 3)
    rep = pseudo_minimizer_check(make_rotations(3), THETA_STAR, THETA_STAR, chart)
    assert rep.passed
    assert [b.level for b in rep.bands] == [2, 3]


@pytest.mark.parametrize("K", [3, 4])
def test_pseudo_minimizer_fails_at_half_angle(K):
    angle = np.pi / K
    chart = make_chart("polar2", THETA_STAR, K)
    rep = pseudo_minimizer_check(make_rotations(K), [np.cos(angle), np.sin(angle)], THETA_STAR, chart)
    assert not rep.passed
    phase = rep.bands[-1]
    assert phase.level == K and phase.min_eig < 0
    assert rep.to_record()["passed"] is False


def test_pseudo_minimizer_power_sums():
    theta = np.array([1.0, -0.3, 0.5])
    rep = pseudo_minimizer_check(make_symmetric(3), theta, theta, make_chart("power_sums", theta))
    assert rep.passed and [b.level for b in rep.bands] == [1, 2, 3]


@pytest.mark.parametrize("which", ["theta_star", "mu_star"])
def test_pseudo_minimizer_mra_points(which):
    theta_star = example_theta_star()
    point = theta_star if which == "theta_star" else theta_from_phase(theta_star, critical_family(6, 0), "-")
    rep = pseudo_minimizer_check(make_cyclic(6), point, theta_star, make_chart("fourier_mra", theta_star))
    assert rep.passed


def test_pseudo_minimizer_chart_failure():
    with pytest.raises(LandscapeError, match="chart failure"):
        pseudo_minimizer_check(make_rotations(3), [0.0, 0.0], THETA_STAR, make_chart("polar2", THETA_STAR, 3))


# Critical points -------------------------------------------------------------------


@pytest.mark.parametrize(
    "eigs, kind",
    [
        ([1.0, 2.0], "minimizer"),
        ([-1.0, -2.0], "maximizer"),
        ([-1.0, 2.0], "saddle"),
        ([0.0, 2.0], "inconclusive"),
        ([5e-9, 1.0], "inconclusive"),
        ([-5e-9, -1.0], "inconclusive"),
    ],
)
def test_classify(eigs, kind):
    assert classify(np.array(eigs)) == kind


def test_clipped_newton_step_ignores_null_direction():
    H = np.diag([2.0, 1e-14])
    step = clipped_newton_step(np.array([1.0, 1.0]), H)
    np.testing.assert_allclose(step, [-0.5, 0.0])


def test_newton_polish_trivial_group_reaches_mean():
    G = make_trivial(2)
    ds = sample_dataset(G, [0.5, -1.0], 1.0, 500, 3)
    theta, ok = newton_polish(RiskModel(G, ds), [5.0, 5.0])
    assert ok
    np.testing.assert_allclose(theta, ds.Y.mean(axis=0), atol=1e-10)


def test_trivial_group_single_critical_point():
    G = make_trivial(2)
    ds = sample_dataset(G, [0.5, -1.0], 1.0, 500, 3)
    survey = find_critical_points(RiskModel(G, ds), 5, 0)
    assert len(survey.points) == 1 and not survey.failed_starts
    p = survey.points[0]
    assert p.kind == "minimizer"
    np.testing.assert_allclose(p.theta, ds.Y.mean(axis=0), atol=1e-10)


def test_benign_survey_single_minimizer_orbit(benign_survey):
    minimizers = [p for p in benign_survey.points if p.kind == "minimizer"]
    assert len(minimizers) == 1
    assert minimizers[0].orbit == "theta_star"
    # seed 0 puts the empirical minimizer 0.19 from the true orbit
    assert orbit_distance(make_rotations(3), minimizers[0].theta, THETA_STAR) <= 0.3
    assert not benign_survey.failed_starts


def test_survey_invariants(benign_model, benign_survey):
    sigma = benign_model.sigma
    mean_norm = np.linalg.norm(benign_model.data.Y, axis=1).mean()
    for p in benign_survey.points:
        assert p.grad_norm <= 1e-10 / sigma**2
        assert np.linalg.norm(p.theta) <= mean_norm + sigma**2 * p.grad_norm
        if p.kind == "minimizer":
            assert p.min_eig >= -1e-8
        assert p.to_record()["class"] == p.kind


def test_benign_basin_fraction(benign_model, benign_survey):
    theta_hat = next(p.theta for p in benign_survey.points if p.kind == "minimizer")
    res = basin_fractions(benign_model, 8, 0, {"theta_hat": theta_hat})
    assert res.fractions == {"theta_hat": 1.0, "unresolved": 0.0}


def test_low_noise_basin_fraction():
    G = make_rotations(3)
    model = RiskModel(G, sample_dataset(G, THETA_STAR, 0.4, 10_000, 0))
    theta_hat, ok = newton_polish(model, THETA_STAR)
    assert ok
    res = basin_fractions(model, 16, 0, {"theta_hat": theta_hat})
    assert res.fractions["theta_hat"] == 1.0


def test_basin_fraction_argument_errors(benign_model):
    with pytest.raises(LandscapeError, match="registered"):
        basin_fractions(benign_model, 2, 0, {})
    with pytest.raises(LandscapeError, match="unsupported"):
        basin_fractions(benign_model, 2, 0, {"a": THETA_STAR}, init_law="uniform")
    with pytest.raises(LandscapeError, match="n_starts"):
        find_critical_points(benign_model, 0, 0)


def test_survey_config_step():
    cfg = survey_config(3.0)
    assert cfg.method == "agd" and cfg.eta == 9.0


def test_start_points_prefix_stable():
    a = start_points(7, 5, 3)
    b = start_points(7, 9, 3)
    np.testing.assert_array_equal(a, b[:5])
    assert not np.array_equal(a, start_points(8, 5, 3))


def test_match_orbit_radius():
    G = make_rotations(3)
    rot = G.act(THETA_STAR)[1]
    name, dists = match_orbit(G, rot + [0.1, 0.0], {"a": THETA_STAR, "b": 2 * THETA_STAR})
    assert name == "a" and dists["a"] == pytest.approx(0.1)
    assert match_orbit(G, np.array([5.0, 5.0]), {"a": THETA_STAR})[0] is None
    assert match_orbit(G, THETA_STAR, {})[0] is None
