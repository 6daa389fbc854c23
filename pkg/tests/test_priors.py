"""Tests for the parametric prior families and the confinement regularizer."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmfteb import priors
from dmfteb.priors import (
    PriorSpec,
    RegularizerSpec,
    alpha_gradient,
    constant_curvature,
    gaussian_location,
    generic_tabulated,
    log_density,
    log_normalization,
    mixture_means,
    mixture_weights,
    regularizer,
    sample_prior,
    score,
    score_derivative,
    second_moment,
    tabulated_from_callable,
)

# frozen reference values, computed by hand before implementation:
#   standard normal log-density at its mode
STD_NORMAL_AT_MODE = -0.9189385332046727
#   two equal-weight unit-precision components at -1 and +1, evaluated at 0:
#   log( exp(-1/2)/sqrt(2*pi) )
SYMMETRIC_PAIR_AT_ZERO = -1.4189385332046727


def central_diff(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def approx_rel(a, b, tol=1e-6):
    return abs(a - b) <= tol * max(1.0, abs(b))


# ---- log_density ----

def test_gaussian_location_log_density_at_mode():
    spec = gaussian_location(1.0)
    assert log_density(0.0, [0.0], spec) == pytest.approx(STD_NORMAL_AT_MODE, abs=1e-12)


def test_mixture_means_log_density_symmetric_pair():
    spec = mixture_means([0.5, 0.5], [1.0, 1.0])
    val = log_density(0.0, [-1.0, 1.0], spec)
    assert val == pytest.approx(SYMMETRIC_PAIR_AT_ZERO, abs=1e-12)


def test_mixture_weights_identical_components_ignore_alpha():
    spec = mixture_weights([0.7, 0.7, 0.7], [2.0, 2.0, 2.0])
    thetas = np.linspace(-3, 3, 11)
    a = log_density(thetas, [0.0, 0.0, 0.0], spec)
    b = log_density(thetas, [5.0, -2.0, 0.3], spec)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_log_density_finite_far_out():
    specs = [
        gaussian_location(0.5),
        mixture_means([0.3, 0.7], [1.0, 4.0]),
        mixture_weights([-1.0, 1.0], [1.0, 2.0]),
        tabulated_from_callable(lambda u: 0.5 * u * u),
    ]
    alphas = [[0.0], [-1.0, 1.0], [0.0, 0.0], [0.0]]
    for spec, al in zip(specs, alphas):
        for th in (-250.0, -30.0, 30.0, 250.0):
            assert np.isfinite(log_density(th, al, spec))


def test_invalid_mixture_specs_rejected():
    with pytest.raises(ValueError):
        mixture_means([0.5, 0.6], [1.0, 1.0])       # weights do not sum to 1
    with pytest.raises(ValueError):
        mixture_means([0.5, 0.5], [1.0, -1.0])      # negative precision
    with pytest.raises(ValueError):
        gaussian_location(0.0)
    with pytest.raises(ValueError):
        PriorSpec(variant="cauchy")


# ---- score ----

def test_gaussian_location_score_linear():
    spec = gaussian_location(1.0)
    assert score(1.0, [0.0], spec) == pytest.approx(-1.0, abs=1e-14)


def test_mixture_score_vanishes_by_symmetry():
    spec = mixture_means([0.5, 0.5], [1.0, 1.0])
    assert score(0.0, [-1.0, 1.0], spec) == pytest.approx(0.0, abs=1e-14)


def test_mixture_score_matches_finite_difference():
    spec = mixture_means([0.5, 0.5], [1.0, 4.0])
    al = [0.0, 0.0]
    fd = central_diff(lambda t: log_density(t, al, spec), 0.3)
    assert approx_rel(score(0.3, al, spec), fd)


# ---- score_derivative ----

def test_gaussian_location_constant_curvature():
    spec = gaussian_location(2.0)
    for th, a in [(0.0, 0.0), (3.0, -1.0), (-7.5, 2.0)]:
        assert score_derivative(th, [a], spec) == pytest.approx(-2.0, abs=1e-14)
    assert constant_curvature(spec) == -2.0


def test_symmetric_pair_curvature_cancels_at_origin():
    # posterior variance of om*(center - theta) exactly offsets the mean
    # precision at the symmetry point
    spec = mixture_means([0.5, 0.5], [1.0, 1.0])
    assert score_derivative(0.0, [-1.0, 1.0], spec) == pytest.approx(0.0, abs=1e-13)


def test_curvature_matches_score_finite_difference():
    spec = mixture_means([0.2, 0.8], [1.0, 3.0])
    al = [-0.5, 1.2]
    for th in (-1.0, 0.0, 0.4, 2.0):
        fd = central_diff(lambda t: score(t, al, spec), th)
        assert approx_rel(score_derivative(th, al, spec), fd)


def test_mixture_curvature_tail_limit():
    spec = mixture_means([0.3, 0.7], [0.5, 4.0])
    al = [-1.0, 1.0]
    for th in (60.0, -60.0):
        assert score_derivative(th, al, spec) == pytest.approx(-0.5, abs=1e-8)
    spec2 = mixture_weights([-2.0, 0.0, 2.0], [3.0, 1.5, 2.0])
    assert score_derivative(80.0, [0.1, 0.2, 0.3], spec2) == pytest.approx(-1.5, abs=1e-8)


def test_convexity_at_infinity_on_grid():
    cases = [
        (gaussian_location(1.0), [0.0], 1.0),
        (mixture_means([0.5, 0.5], [1.0, 0.25]), [-1.0, 1.0], 0.25),
        (mixture_weights([-1.0, 1.0], [2.0, 5.0]), [0.3, -0.3], 2.0),
        (tabulated_from_callable(lambda u: 0.5 * u * u), [0.0], 1.0),
    ]
    for spec, al, floor in cases:
        grid = np.concatenate([np.linspace(-40, -15, 50), np.linspace(15, 40, 50)])
        curv = score_derivative(grid, al, spec)
        assert np.all(curv <= -0.4 * floor)


# ---- alpha_gradient ----

def test_gaussian_location_alpha_gradient():
    spec = gaussian_location(1.0)
    g = alpha_gradient(2.0, [0.0], spec)
    assert g.shape == (1,)
    assert g[0] == pytest.approx(2.0, abs=1e-14)


def test_mixture_weights_identical_components_zero_gradient():
    spec = mixture_weights([1.0, 1.0], [2.0, 2.0])
    g = alpha_gradient(0.7, [0.4, -0.1], spec)
    np.testing.assert_allclose(g, 0.0, atol=1e-14)


def test_mixture_means_alpha_gradient_matches_finite_difference():
    spec = mixture_means([0.4, 0.6], [1.0, 2.5])
    al = np.array([-0.8, 1.1])
    th = 0.45
    g = alpha_gradient(th, al, spec)
    for i in range(2):
        def f(ai, i=i):
            a = al.copy()
            a[i] = ai
            return log_density(th, a, spec)
        assert approx_rel(g[i], central_diff(f, al[i]))


def test_mixture_weights_gradient_sums_to_zero():
    spec = mixture_weights([-2.0, 0.0, 2.0], [1.0, 25.0, 0.5])
    rng = np.random.default_rng(0)
    for _ in range(20):
        al = rng.normal(size=3)
        th = rng.normal() * 4
        assert abs(alpha_gradient(th, al, spec).sum()) < 1e-14


def test_alpha_gradient_vectorizes_over_theta():
    spec = mixture_means([0.5, 0.5], [1.0, 1.0])
    th = np.linspace(-2, 2, 7)
    g = alpha_gradient(th, [-1.0, 1.0], spec)
    assert g.shape == (7, 2)
    single = alpha_gradient(th[3], [-1.0, 1.0], spec)
    np.testing.assert_allclose(g[3], single, atol=1e-14)


# ---- generic-tabulated ----

def test_tabulated_gaussian_matches_closed_form():
    # tabulating a standard normal should reproduce its score and curvature
    spec = tabulated_from_callable(lambda u: 0.5 * u * u, normalize=True)
    th = np.array([-2.0, -0.3, 0.0, 1.4, 3.0])
    np.testing.assert_allclose(log_density(th, [0.0], spec),
                               -0.5 * th * th + STD_NORMAL_AT_MODE, atol=1e-6)
    np.testing.assert_allclose(score(th, [0.0], spec), -th, atol=1e-5)
    np.testing.assert_allclose(score_derivative(th, [0.0], spec), -1.0, atol=1e-3)
    # location parameter shifts the density
    assert log_density(1.5, [1.5], spec) == pytest.approx(
        log_density(0.0, [0.0], spec), abs=1e-12)
    # alpha gradient is minus the score for a location family
    assert alpha_gradient(0.7, [0.2], spec)[0] == pytest.approx(
        -score(0.7, [0.2], spec), abs=1e-12)


def test_tabulated_tail_is_concave_quadratic():
    spec = tabulated_from_callable(lambda u: 0.5 * u * u)
    hi = spec.grid[-1]
    assert score_derivative(hi + 5.0, [0.0], spec) <= -0.5
    # value and slope continuous at the grid edge
    eps = 1e-7
    inner = log_density(hi - eps, [0.0], spec)
    outer = log_density(hi + eps, [0.0], spec)
    assert abs(inner - outer) < 1e-5


# ---- normalization ----

def test_all_variants_normalize():
    cases = [
        (gaussian_location(2.0), [1.5]),
        (mixture_means([0.25, 0.75], [1.0, 9.0]), [-2.0, 2.0]),
        (mixture_weights([-1.0, 0.0, 1.0], [4.0, 1.0, 4.0]), [0.5, -0.5, 0.0]),
        (tabulated_from_callable(lambda u: 0.5 * u * u + 0.3 * np.log(np.cosh(u))), [0.0]),
    ]
    for spec, al in cases:
        assert abs(np.exp(log_normalization(spec, al)) - 1.0) < 1e-6


# ---- second moment ----

def test_second_moment_closed_forms():
    assert second_moment(gaussian_location(4.0), [3.0]) == pytest.approx(9.25, abs=1e-12)
    spec = mixture_means([0.5, 0.5], [1.0, 1.0])
    assert second_moment(spec, [-1.0, 1.0]) == pytest.approx(2.0, abs=1e-12)
    specw = mixture_weights([0.0, 2.0], [1.0, 0.5])
    # equal softmax weights: 0.5*(0+1) + 0.5*(4+2)
    assert second_moment(specw, [0.0, 0.0]) == pytest.approx(3.5, abs=1e-12)


def test_second_moment_matches_samples():
    spec = mixture_means([0.3, 0.7], [1.0, 4.0])
    al = [-1.0, 2.0]
    rng = np.random.default_rng(7)
    draws = sample_prior(spec, al, 200_000, rng)
    m2 = second_moment(spec, al)
    se = np.std(draws ** 2) / np.sqrt(draws.size)
    assert abs(np.mean(draws ** 2) - m2) < 4 * se


# ---- sampling ----

def test_sample_prior_gaussian_moments():
    rng = np.random.default_rng(11)
    draws = sample_prior(gaussian_location(1.0), [5.0], 100_000, rng)
    assert abs(draws.mean() - 5.0) < 0.02
    assert abs(draws.var() - 1.0) < 0.02


def test_sample_prior_empty():
    rng = np.random.default_rng(0)
    assert sample_prior(gaussian_location(1.0), [0.0], 0, rng).size == 0


def test_sample_prior_component_frequencies():
    # widely separated components so nearest-center classification is exact
    spec = mixture_weights([-10.0, 0.0, 10.0], [1.0, 1.0, 1.0])
    p = np.array([0.6, 0.2, 0.2])
    al = np.log(p)
    n = 100_000
    rng = np.random.default_rng(3)
    draws = sample_prior(spec, al, n, rng)
    labels = np.argmin(np.abs(draws[:, None] - np.array([-10.0, 0.0, 10.0])), axis=1)
    freqs = np.bincount(labels, minlength=3) / n
    tol = 3 * np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freqs - p) <= tol)


def test_sample_prior_deterministic():
    spec = mixture_means([0.5, 0.5], [1.0, 2.0])
    a = sample_prior(spec, [-1.0, 1.0], 100, np.random.default_rng(42))
    b = sample_prior(spec, [-1.0, 1.0], 100, np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)


def test_sample_prior_tabulated_moments():
    spec = tabulated_from_callable(lambda u: 0.5 * u * u)
    rng = np.random.default_rng(5)
    draws = sample_prior(spec, [2.0], 200_000, rng)
    assert abs(draws.mean() - 2.0) < 0.02
    assert abs(draws.var() - 1.0) < 0.03


# ---- regularizer ----

def test_regularizer_zero_inside_radius():
    val, grad = regularizer(np.array([1.0, 1.0]), RegularizerSpec(radius=3.0))
    assert val == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_regularizer_dominates_linear_growth():
    val, _ = regularizer(np.array([3.0, 0.0]), RegularizerSpec(radius=1.0))
    assert val >= (3.0 - 1.0)


def test_regularizer_gradient_matches_finite_difference():
    spec = RegularizerSpec(radius=1.0)
    al = np.array([1.2, 0.9])  # norm = 1.5 = D + 0.5
    assert np.linalg.norm(al) == pytest.approx(1.5)
    _, grad = regularizer(al, spec)
    for i in range(2):
        def f(ai, i=i):
            a = al.copy()
            a[i] = ai
            return regularizer(a, spec)[0]
        assert approx_rel(grad[i], central_diff(f, al[i]))


def test_regularizer_smooth_and_monotone():
    spec = RegularizerSpec(radius=2.0)
    xs = np.linspace(0.0, 6.0, 601)
    vals = np.array([regularizer(np.array([x]), spec)[0] for x in xs])
    # zero up to the radius, then strictly increasing
    assert np.all(vals[xs <= 2.0] == 0.0)
    inc = np.diff(vals[xs > 2.0])
    assert np.all(inc > 0)
    # lower bound beyond radius + 1
    far = xs >= 3.0
    assert np.all(vals[far] >= xs[far] - 2.0 - 1e-12)
    # continuity of value and slope at both knots
    for knot in (2.0, 3.0):
        h = 1e-6
        lo = regularizer(np.array([knot - h]), spec)[0]
        hi = regularizer(np.array([knot + h]), spec)[0]
        assert abs(hi - lo) < 1e-5
        dlo = central_diff(lambda x: regularizer(np.array([x]), spec)[0], knot - 10 * h)
        dhi = central_diff(lambda x: regularizer(np.array([x]), spec)[0], knot + 10 * h)
        assert abs(dhi - dlo) < 1e-3


def test_regularizer_none_spec_is_identically_zero():
    val, grad = regularizer(np.array([5.0, 5.0]), None)
    assert val == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_regularizer_at_origin():
    val, grad = regularizer(np.zeros(3), RegularizerSpec(radius=1.0))
    assert val == 0.0
    np.testing.assert_array_equal(grad, 0.0)


# ---- property tests ----

@settings(max_examples=60, deadline=None)
@given(
    th=st.floats(-8, 8),
    a1=st.floats(-3, 3),
    a2=st.floats(-3, 3),
)
def test_property_score_is_density_gradient(th, a1, a2):
    spec = mixture_means([0.35, 0.65], [1.0, 2.0])
    al = [a1, a2]
    fd = central_diff(lambda t: log_density(t, al, spec), th)
    assert approx_rel(score(th, al, spec), fd, tol=5e-6)


@settings(max_examples=60, deadline=None)
@given(
    th=st.floats(-8, 8),
    c=st.floats(-20, 20),
    a1=st.floats(-2, 2),
    a2=st.floats(-2, 2),
    a3=st.floats(-2, 2),
)
def test_property_weight_softmax_gauge_invariance(th, c, a1, a2, a3):
    spec = mixture_weights([-1.0, 0.0, 1.5], [2.0, 1.0, 3.0])
    al = np.array([a1, a2, a3])
    base = log_density(th, al, spec)
    shifted = log_density(th, al + c, spec)
    assert abs(base - shifted) < 1e-9 * max(1.0, abs(base))


@settings(max_examples=40, deadline=None)
@given(th=st.floats(-6, 6), a1=st.floats(-2, 2), a2=st.floats(-2, 2))
def test_property_weight_gradient_zero_sum(th, a1, a2):
    spec = mixture_weights([-1.0, 1.0], [1.0, 4.0])
    g = alpha_gradient(th, [a1, a2], spec)
    assert abs(g.sum()) < 1e-13
