import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from conftest import make_data
from oracles import coordinate_descent_wls, loop_outer_mean, random_instance, weighted_rss

from hetwls.errors import (
    DegenerateGroupVariance,
    EmptyGroup,
    InvalidGamma,
    InvalidMoments,
    MissingColumn,
    SingularCovariance,
    SingularDesign,
)
from hetwls.estimators import (
    AdaptiveGrouped,
    AdaptiveKnown,
    Coordinate,
    FixedDelta,
    FixedWeights,
    Identity,
    InverseVariance,
    RegressionData,
    Trace,
    WeightMoments,
    confidence_region_contains,
    estimate_A,
    estimate_B,
    estimate_Cm,
    estimate_delta,
    estimate_g_squared,
    fit,
    gamma_from_spec,
    nu_hat_1,
    nu_hat_2,
    nu_oracle,
    optimal_weights_grouped,
    optimal_weights_known,
    solve_weighted,
    strategy_from_name,
    theoretical_nu,
    wald_statistic,
)


# -- data container ---------------------------------------------------------


def test_regression_data_is_read_only(data):
    with pytest.raises(ValueError):
        data.X[0, 0] = 5.0
    with pytest.raises(ValueError):
        data.y[0] = 5.0


def test_regression_data_copies_input():
    X = np.ones((3, 1))
    d = RegressionData(X, [1.0, 2.0, 3.0])
    X[0, 0] = 9.0
    assert d.X[0, 0] == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(X=np.ones((3, 2)), y=np.ones(4)),
        dict(X=np.ones((1, 2)), y=np.ones(1)),
        dict(X=np.ones((3, 1)), y=[1, np.nan, 2]),
        dict(X=np.ones((3, 1)), y=np.ones(3), sigma=[1, 0, 1]),
        dict(X=np.ones((3, 1)), y=np.ones(3), sigma=[1, 1]),
        dict(X=np.ones((3, 1)), y=np.ones(3), groups=[0, 1, 1]),
        dict(X=np.ones((3, 1)), y=np.ones(3), groups=[1.5, 1, 1]),
    ],
)
def test_regression_data_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        RegressionData(**kwargs)


def test_unused_group_label_is_empty_group():
    with pytest.raises(EmptyGroup) as exc:
        RegressionData(np.ones((3, 1)), np.ones(3), groups=[1, 3, 3])
    assert exc.value.group == 2


def test_missing_sigma_names_the_column(rng):
    d = RegressionData(np.ones((4, 1)), rng.normal(size=4))
    with pytest.raises(MissingColumn, match="sigma"):
        fit(d, InverseVariance())
    with pytest.raises(MissingColumn, match="group"):
        fit(d, AdaptiveGrouped())


# -- weighted solve ---------------------------------------------------------


def test_solve_weighted_matches_brute_force(rng):
    for _ in range(20):
        X, y, w = random_instance(rng)
        b = solve_weighted(RegressionData(X, y), w)
        ref = coordinate_descent_wls(X, y, w)
        np.testing.assert_allclose(b, ref, atol=1e-8)
        assert weighted_rss(X, y, w, b) <= weighted_rss(X, y, w, ref) + 1e-10


def test_solve_weighted_is_stationary(data, rng):
    w = rng.uniform(0.5, 2.0, size=data.n)
    b = solve_weighted(data, w)
    grad = data.X.T @ (w * (data.y - data.X @ b))
    assert np.max(np.abs(grad)) < 1e-10


def test_collinear_design_is_singular(rng):
    x = rng.normal(size=6)
    d = RegressionData(np.column_stack([x, 2 * x]), rng.normal(size=6))
    with pytest.raises(SingularDesign) as exc:
        solve_weighted(d, np.ones(6))
    assert exc.value.rcond < 1e-12
    with pytest.raises(SingularDesign):
        estimate_B(d)


@pytest.mark.parametrize("w", [[1, 1, 1, 0], [1, 1, 1, -1], [1, 1, 1, np.inf], [1, 1, 1]])
def test_bad_weights(w):
    d = RegressionData(np.ones((4, 1)), np.arange(4.0))
    with pytest.raises(ValueError):
        solve_weighted(d, w)


def test_exact_fit_zero_residual():
    X = np.column_stack([np.ones(5), np.arange(5.0)])
    d = RegressionData(X, 2.0 + 3.0 * np.arange(5.0))
    np.testing.assert_allclose(solve_weighted(d, np.ones(5)), [2.0, 3.0], atol=1e-12)


# -- misspecification estimates --------------------------------------------


def test_estimate_B_is_inverse_second_moment(data):
    B = estimate_B(data)
    np.testing.assert_allclose(B @ (data.X.T @ data.X / data.n), np.eye(data.p), atol=1e-10)
    np.testing.assert_array_equal(B, B.T)


def test_g_squared_may_be_negative(data):
    beta = solve_weighted(data, np.ones(data.n))
    g2 = estimate_g_squared(data, beta)
    r = data.y - data.X @ beta
    np.testing.assert_allclose(g2, r**2 - data.sigma**2)
    assert np.any(g2 < 0)


def test_estimate_A_matches_loop(data):
    beta = solve_weighted(data, np.ones(data.n))
    B = estimate_B(data)
    r2 = (data.y - data.X @ beta) ** 2
    w4 = data.sigma**-4
    M = loop_outer_mean(data.X, (r2 - data.sigma**2) * w4) * data.n / w4.sum()
    np.testing.assert_allclose(estimate_A(data, beta, B), B @ M @ B, rtol=1e-10, atol=1e-14)


def test_delta_clamped_at_zero():
    B = np.eye(2)
    assert estimate_delta(-np.eye(2), B) == 0.0
    assert estimate_delta(3 * np.eye(2), B) == pytest.approx(3.0)
    assert estimate_delta(np.diag([1.0, 5.0]), B, Coordinate(1)) == pytest.approx(5.0)


def test_delta_rejects_nonpositive_gamma():
    with pytest.raises(InvalidGamma):
        estimate_delta(np.eye(2), np.diag([1.0, -1.0]))


def test_optimal_weights_known(data):
    w = optimal_weights_known(data, 0.25)
    np.testing.assert_allclose(w, 1 / (data.sigma**2 + 0.25))
    with pytest.raises(ValueError):
        optimal_weights_known(data, -1.0)


def test_estimate_Cm_matches_loop(data):
    beta = solve_weighted(data, np.ones(data.n))
    r2 = (data.y - data.X @ beta) ** 2
    C = estimate_Cm(data, beta)
    assert len(C) == data.n_groups
    for m, Cm in enumerate(C, start=1):
        mask = data.groups == m
        np.testing.assert_allclose(Cm, loop_outer_mean(data.X[mask], r2[mask]), rtol=1e-12)


def test_grouped_weights_constant_within_groups(data):
    beta = solve_weighted(data, np.ones(data.n))
    B = estimate_B(data)
    w = optimal_weights_grouped(estimate_Cm(data, beta), B, data.groups)
    for m in range(1, data.n_groups + 1):
        assert np.ptp(w[data.groups == m]) == 0.0
    assert np.all(w > 0)


def test_degenerate_group_variance():
    x = np.linspace(0, 1, 8)
    X = np.column_stack([np.ones(8), x])
    y = 1.0 + 2.0 * x
    d = RegressionData(X, y, np.full(8, 0.1), np.repeat([1, 2], 4))
    with pytest.raises(DegenerateGroupVariance) as exc:
        fit(d, AdaptiveGrouped())
    assert exc.value.group == 1


# -- fit ----------------------------------------------------------------------


def test_fit_defaults_to_adaptive_known(data):
    res = fit(data)
    assert isinstance(res.strategy, AdaptiveKnown)
    assert isinstance(res.gamma, Trace)
    assert res.delta >= 0
    np.testing.assert_allclose(res.weights, 1 / (data.sigma**2 + res.delta))


def test_adaptive_known_iteration_by_hand(data):
    B = estimate_B(data)
    beta = solve_weighted(data, np.ones(data.n))
    for _ in range(2):
        delta = estimate_delta(estimate_A(data, beta, B), B)
        beta = solve_weighted(data, 1 / (data.sigma**2 + delta))
    res = fit(data, AdaptiveKnown(2))
    np.testing.assert_allclose(res.beta, beta, rtol=1e-13)
    assert res.delta == pytest.approx(delta, rel=1e-13)


def test_fixed_strategies(data):
    w = np.linspace(1, 2, data.n)
    np.testing.assert_allclose(fit(data, FixedWeights(w)).beta, solve_weighted(data, w))
    d = fit(data, FixedDelta(0.3))
    np.testing.assert_allclose(d.weights, 1 / (data.sigma**2 + 0.3))
    np.testing.assert_allclose(fit(data, FixedDelta(0.0)).beta, fit(data, InverseVariance()).beta, rtol=1e-12)


def test_large_fixed_delta_approaches_ols(data):
    a = fit(data, FixedDelta(1e9)).beta
    np.testing.assert_allclose(a, fit(data, Identity()).beta, rtol=1e-6)


def test_fit_result_is_frozen(data):
    res = fit(data, Identity())
    with pytest.raises(ValueError):
        res.beta[0] = 1.0


def test_unknown_strategy(data):
    with pytest.raises(TypeError):
        fit(data, object())


@pytest.mark.parametrize("bad", [0, -1])
def test_iterations_positive(bad):
    with pytest.raises(ValueError):
        AdaptiveKnown(bad)
    with pytest.raises(ValueError):
        AdaptiveGrouped(bad)


# -- covariance estimates -----------------------------------------------------


def test_nu_hat_1_formula(data):
    B = estimate_B(data)
    A = np.array([[0.2, 0.05], [0.05, 0.1]])
    w = np.linspace(1, 3, data.n)
    expected = data.n * (np.sum(w**2) * A + np.sum(w**2 * data.sigma**2) * B) / np.sum(w) ** 2
    np.testing.assert_allclose(nu_hat_1(data, A, B, w), expected, rtol=1e-12)
    np.testing.assert_allclose(nu_oracle(data, A, B, w), expected, rtol=1e-12)


def test_nu_hat_2_is_hc0_for_ols(data):
    res = fit(data, Identity())
    X = data.X
    r = data.y - X @ res.beta
    XtX_inv = np.linalg.inv(X.T @ X)
    hc0 = XtX_inv @ (X.T * r**2) @ X @ XtX_inv
    np.testing.assert_allclose(res.nu_hat, data.n * hc0, rtol=1e-10)
    np.testing.assert_allclose(nu_hat_2(data, estimate_B(data), np.ones(data.n), res.beta), res.nu_hat)


def test_nu_hat_2_scale_invariant(data, rng):
    w = rng.uniform(0.5, 2, data.n)
    B = estimate_B(data)
    beta = solve_weighted(data, w)
    np.testing.assert_allclose(nu_hat_2(data, B, 7.5 * w, beta), nu_hat_2(data, B, w, beta), rtol=1e-12)


def test_theoretical_nu():
    A = np.diag([1.0, 2.0])
    B = np.eye(2)
    m = WeightMoments(mean_w=2.0, mean_w2=5.0, mean_s2w2=3.0)
    np.testing.assert_allclose(theoretical_nu(A, B, m), (5 * A + 3 * B) / 4)
    np.testing.assert_allclose(theoretical_nu(A, B, m.__dict__), (5 * A + 3 * B) / 4)
    with pytest.raises(InvalidMoments):
        theoretical_nu(A, B, WeightMoments(0.0, 1.0, 1.0))


def test_weight_moments_from_discrete():
    m = WeightMoments.from_discrete([1.0, 2.0], [0.25, 0.75], lambda s: 1 / s)
    assert m.mean_w == pytest.approx(0.25 + 0.375)
    assert m.mean_w2 == pytest.approx(0.25 + 0.75 / 4)
    assert m.mean_s2w2 == pytest.approx(1.0)


def test_wald_and_region():
    nu = np.diag([1.0, 4.0])
    assert wald_statistic([1.0, 2.0], nu, [0.0, 0.0], 10) == pytest.approx(10 * (1 + 1))
    assert confidence_region_contains([0.1, 0.1], nu, [0, 0], 0.95, n=10)
    assert not confidence_region_contains([1.0, 2.0], nu, [0, 0], 0.95, n=10)


@pytest.mark.parametrize("nu", [np.zeros((2, 2)), np.array([[1, 1], [1, 1.0]]), np.diag([1, np.nan])])
def test_wald_singular(nu):
    with pytest.raises(SingularCovariance):
        wald_statistic([0, 0], nu, [1, 1], 5)


# -- configuration helpers ----------------------------------------------------


@pytest.mark.parametrize(
    "name,cls",
    [("ols", Identity), ("identity", Identity), ("wls", InverseVariance),
     ("inverse_variance", InverseVariance), ("adaptive_known", AdaptiveKnown),
     ("delta", AdaptiveKnown), ("adaptive-grouped", AdaptiveGrouped)],
)
def test_strategy_from_name(name, cls):
    assert isinstance(strategy_from_name(name), cls)


def test_strategy_from_name_errors():
    with pytest.raises(ValueError):
        strategy_from_name("nope")
    with pytest.raises(ValueError):
        strategy_from_name("fixed_weights")
    with pytest.raises(ValueError):
        strategy_from_name("fixed_delta")
    assert strategy_from_name("fixed_delta", delta=0.5).delta == 0.5


def test_gamma_from_spec():
    assert isinstance(gamma_from_spec(None), Trace)
    assert gamma_from_spec({"coordinate": 1}) == Coordinate(1)
    with pytest.raises(ValueError):
        gamma_from_spec("max")
    with pytest.raises(ValueError):
        Coordinate(-1)


# -- properties ---------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-3, 1e3))
def test_property_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(12), rng.normal(size=12)])
    d = RegressionData(X, rng.normal(size=12))
    w = rng.uniform(0.1, 10, size=12)
    np.testing.assert_allclose(solve_weighted(d, scale * w), solve_weighted(d, w), rtol=1e-10, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_property_delta_nonnegative(seed):
    d = make_data(np.random.default_rng(seed), n=20)
    for gamma in (Trace(), Coordinate(0), Coordinate(1)):
        res = fit(d, AdaptiveKnown(), gamma)
        assert res.delta >= 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_property_weighted_rss_is_minimal(seed):
    rng = np.random.default_rng(seed)
    X, y, w = random_instance(rng)
    b = solve_weighted(RegressionData(X, y), w)
    for _ in range(5):
        other = b + 1e-3 * rng.normal(size=b.size)
        assert weighted_rss(X, y, w, b) <= weighted_rss(X, y, w, other)
