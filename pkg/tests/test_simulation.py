import numpy as np
import pytest
from scipy import stats

from hetwls.errors import SingularCovariance
from hetwls.estimators import AdaptiveGrouped, Coordinate, Identity, InverseVariance
from hetwls.simulation import (
    DEFAULT_SIGMA_LAW,
    DEFAULT_STEP_LAW,
    CustomTable,
    DgpConfig,
    DiscreteSigma,
    Linear,
    Quadratic,
    StepOfX,
    asymptotic_ellipse,
    generate_dataset,
    oracle_quantities,
    replicate_rng,
    rows_to_csv,
    run_monte_carlo,
    theoretical_nus,
)

# Closed forms for f(x) = x^2 on Unif(0, 1), derived symbolically.
BETA = np.array([-1 / 6, 1.0])
B_TRUE = np.array([[4.0, -6.0], [-6.0, 12.0]])
A_TRUE = np.array([[2 / 63, -11 / 210], [-11 / 210, 11 / 105]])
DELTA_TRUE = (43 / 315) / 16
# Limit of inverse-variance WLS when sigma is the default step function of x.
STEP_WLS_LIMIT = np.array([-218635600783 / 9099303223200, 398603718239 / 530792688020])


# -- laws and functions -------------------------------------------------------


def test_discrete_sigma_validation():
    with pytest.raises(ValueError):
        DiscreteSigma((0.1, 1.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        DiscreteSigma((0.1, -1.0), (0.5, 0.5))
    with pytest.raises(ValueError):
        DiscreteSigma((0.1,), (0.5, 0.5))


def test_discrete_sigma_frequencies():
    rng = np.random.default_rng(3)
    s = DEFAULT_SIGMA_LAW.sample(np.zeros(200_000), rng)
    counts = np.array([np.sum(s == v) for v in DEFAULT_SIGMA_LAW.values])
    _, pval = stats.chisquare(counts, 200_000 * np.array(DEFAULT_SIGMA_LAW.probs))
    assert pval > 1e-4


def test_step_law_pieces():
    law = DEFAULT_STEP_LAW
    x = np.array([0.0, 0.049, 0.05, 0.5, 0.95, 0.951, 1.0])
    np.testing.assert_array_equal(law.sigma_of(x), [0.01, 0.01, 0.1, 0.1, 0.1, 1.0, 1.0])
    m = law.moments(lambda s: np.ones_like(s))
    assert m.mean_s2w2 == pytest.approx(0.05 * 1e-4 + 0.9 * 1e-2 + 0.05)
    with pytest.raises(ValueError):
        StepOfX((0.5,), (1.0,))
    with pytest.raises(ValueError):
        StepOfX((0.6, 0.4), (1.0, 1.0, 1.0))


def test_regression_functions():
    assert Quadratic()(0.5) == 0.25
    assert Linear((1.0, 2.0))(0.5) == 2.0
    tab = CustomTable((0.0, 0.5, 1.0), (0.0, 1.0, 0.0))
    assert tab(0.25) == pytest.approx(0.5)
    assert tab.breakpoints == (0.5,)
    with pytest.raises(ValueError):
        CustomTable((0.1, 1.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        Linear((1.0, 2.0, 3.0))


def test_config_validation():
    with pytest.raises(ValueError):
        DgpConfig(n=1)
    with pytest.raises(ValueError):
        DgpConfig(replicates=0)
    with pytest.raises(ValueError):
        DgpConfig(seed=-1)


# -- data generation ----------------------------------------------------------


def test_dataset_is_deterministic():
    cfg = DgpConfig(n=30)
    a, b = generate_dataset(cfg, 4), generate_dataset(cfg, 4)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.sigma, b.sigma)
    assert not np.array_equal(a.y, generate_dataset(cfg, 5).y)


def test_dataset_draw_order():
    cfg = DgpConfig(n=25, seed=99)
    rng = replicate_rng(99, 7)
    x = rng.random(25)
    s = cfg.sigma_law.sample(x, rng)
    y = x**2 + s * rng.standard_normal(25)
    d = generate_dataset(cfg, 7)
    np.testing.assert_array_equal(d.X[:, 1], x)
    np.testing.assert_array_equal(d.y, y)


def test_groups_label_present_sigma_values():
    d = generate_dataset(DgpConfig(n=20), 0)
    present = np.unique(d.sigma)
    assert d.n_groups == present.size
    for m, s in enumerate(present, start=1):
        assert np.all(d.sigma[d.groups == m] == s)


# -- oracle quantities ----------------------------------------------------------


def test_oracle_quadratic_closed_forms():
    o = oracle_quantities(DgpConfig())
    np.testing.assert_allclose(o.beta_true, BETA, atol=1e-10)
    np.testing.assert_allclose(o.B_true, B_TRUE, atol=1e-8)
    np.testing.assert_allclose(o.A_true, A_TRUE, atol=1e-10)
    assert o.mean_g2 == pytest.approx(1 / 180, abs=1e-12)
    assert o.delta_true == pytest.approx(DELTA_TRUE, rel=1e-9)
    np.testing.assert_array_equal(o.wls_limit, o.beta_true)


def test_oracle_coordinate_gamma():
    o = oracle_quantities(DgpConfig(), Coordinate(1))
    assert o.delta_true == pytest.approx(A_TRUE[1, 1] / 12, rel=1e-9)


def test_oracle_linear_has_no_misspecification():
    o = oracle_quantities(DgpConfig(regression_fn=Linear((0.5, -2.0))))
    np.testing.assert_allclose(o.beta_true, [0.5, -2.0], atol=1e-12)
    np.testing.assert_allclose(o.A_true, 0.0, atol=1e-12)
    assert o.delta_true == pytest.approx(0.0, abs=1e-20)


def test_dependent_wls_limit():
    o = oracle_quantities(DgpConfig(sigma_law=DEFAULT_STEP_LAW))
    np.testing.assert_allclose(o.wls_limit, STEP_WLS_LIMIT, rtol=1e-9)


def test_custom_table_uses_breakpoints():
    tab = CustomTable((0.0, 0.3, 1.0), (0.0, 1.0, 1.0))
    o = oracle_quantities(DgpConfig(regression_fn=tab))
    xs = np.linspace(0, 1, 400_001)
    X = np.column_stack([np.ones_like(xs), xs])
    ref = np.linalg.lstsq(X, tab(xs), rcond=None)[0]
    np.testing.assert_allclose(o.beta_true, ref, atol=1e-5)


def test_theoretical_nus_traces():
    nus = theoretical_nus(DgpConfig())
    assert np.trace(nus["ols"]) == pytest.approx(1.08058793650794, rel=1e-9)
    assert np.trace(nus["wls"]) == pytest.approx(1.99107033227915, rel=1e-9)
    assert np.trace(nus["adaptive_known"]) == pytest.approx(0.294077328667644, rel=1e-9)


# -- ellipses ---------------------------------------------------------------------


def test_ellipse_axes():
    nu = np.array([[4.0, 0.0], [0.0, 1.0]])
    e = asymptotic_ellipse(nu, 0.95, n=4)
    q = stats.chi2.ppf(0.95, 2)
    np.testing.assert_allclose(e.semi_axes, np.sqrt(np.array([4.0, 1.0]) * q / 4))
    assert abs(e.angle) < 1e-12
    pts = e.boundary(np.zeros(2), num=50)
    d = np.einsum("in,ij,jn->n", pts, np.linalg.inv(nu), pts) * 4
    np.testing.assert_allclose(d, q, rtol=1e-10)


def test_ellipse_rotated_and_singular():
    R = np.array([[np.cos(0.4), -np.sin(0.4)], [np.sin(0.4), np.cos(0.4)]])
    e = asymptotic_ellipse(R @ np.diag([9.0, 1.0]) @ R.T)
    assert e.angle == pytest.approx(0.4)
    with pytest.raises(SingularCovariance):
        asymptotic_ellipse(np.ones((2, 2)))


# -- Monte Carlo engine ---------------------------------------------------------


def test_small_run_report():
    cfg = DgpConfig(n=60, replicates=40, seed=5)
    rep = run_monte_carlo(cfg)
    assert rep.strategies == ["wls", "ols", "adaptive_known", "adaptive_grouped"]
    assert all(v == 0 for v in rep.failures.values())
    assert np.isnan(rep.coverage("adaptive_grouped", "nu1"))
    for name in rep.strategies:
        assert 0.0 <= rep.coverage(name, "nu2") <= 1.0
        assert rep.betas[name].shape == (40, 2)
    rows = rep.replicate_rows()
    assert rows[0][:6] == ["replicate", "wls_beta0", "wls_beta1", "wls_covered_nu1", "wls_covered_nu2", "wls_covered_or"]
    assert len(rows[0]) == 1 + 4 * 5
    assert len(rows) == 1 + 40
    grouped_nu1 = rows[0].index("adaptive_grouped_covered_nu1")
    assert all(r[grouped_nu1] == "" for r in rows[1:])
    summary = rep.summary_rows()
    assert summary[0] == ["estimator", "WLS", "OLS", "Delta", "Grouped"]
    assert [r[0] for r in summary] == ["estimator", "nu1", "nu2", "oracle", "failures", "replicates"]
    assert len(rep.ellipse_rows(num=10)) == 1 + 4 * 10


def test_run_is_thread_count_independent():
    cfg = DgpConfig(n=40, replicates=25, seed=8)
    a = run_monte_carlo(cfg, threads=1)
    b = run_monte_carlo(cfg, threads=3)
    assert rows_to_csv(a.replicate_rows()) == rows_to_csv(b.replicate_rows())
    assert rows_to_csv(a.summary_rows()) == rows_to_csv(b.summary_rows())


def test_run_subset_of_strategies_and_estimators():
    cfg = DgpConfig(n=40, replicates=10)
    rep = run_monte_carlo(cfg, [Identity(), InverseVariance()], ("nu2",))
    assert rep.summary_rows()[0] == ["estimator", "OLS", "WLS"]
    with pytest.raises(ValueError):
        run_monte_carlo(cfg, [Identity(), Identity()])
    with pytest.raises(ValueError):
        run_monte_carlo(cfg, variance_estimators=("nu3",))


def test_failed_replicates_are_counted():
    # Two points fit a line exactly, so the grouped residual variance is zero.
    cfg = DgpConfig(n=2, replicates=5, sigma_law=DiscreteSigma((0.1,), (1.0,)))
    rep = run_monte_carlo(cfg, [Identity(), AdaptiveGrouped()])
    assert rep.failures == {"ols": 0, "adaptive_grouped": 5}
    assert np.all(np.isnan(rep.betas["adaptive_grouped"]))
    summary = rep.summary_rows()
    assert summary[-2] == ["failures", 0, 5]
    assert summary[2] == ["nu2", summary[2][1], ""]


def test_dependent_case_has_no_ellipses():
    rep = run_monte_carlo(DgpConfig(n=30, replicates=3, sigma_law=DEFAULT_STEP_LAW))
    assert rep.ellipse_rows() == [["strategy", "point", "beta0", "beta1"]]
