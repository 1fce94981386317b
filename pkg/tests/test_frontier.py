import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import R1_COV, R1_MEAN, R1_RF, random_instance
from tangency_forecast.data import ReturnPanel
from tangency_forecast.frontier import (
    CoefficientSeries,
    DegenerateFrontierError,
    InsufficientHistoryError,
    InterpretableCoefficients,
    MertonCoefficients,
    MomentEstimate,
    NoTangencyError,
    SingularCovarianceError,
    coefficients,
    condition_covariance,
    efficient_weights,
    estimate_moments,
    euclidean_cosine,
    frontier_curve,
    frontier_sigma,
    frontier_sigma_merton,
    interpretable_from_merton,
    merton_coefficients,
    merton_from_interpretable,
    min_variance_weights,
    portfolio_point,
    rolling_coefficients,
    rolling_moments,
    tangency_from_coefficients,
    tangency_numeric,
    u_decomposition,
)


def panel_from(returns, start="2020-01-01", symbols=None):
    returns = np.asarray(returns, dtype=float)
    if returns.ndim == 1:
        returns = returns[:, None]
    dates = np.datetime64(start) + np.arange(returns.shape[0])
    symbols = symbols or tuple(f"S{i}" for i in range(returns.shape[1]))
    return ReturnPanel(dates, tuple(symbols), returns)


# --------------------------------------------------------------------------
# R1 reference values, reproduced by explicit 2x2 algebra first


def r1_oracle():
    (a, b), (c, d) = R1_COV
    det = a * d - b * c
    inv = np.array([[d, -b], [-c, a]]) / det
    e = np.ones(2)
    A = e @ inv @ e
    B = R1_MEAN @ inv @ e
    C = R1_MEAN @ inv @ R1_MEAN
    return A, B, C


def test_r1_oracle_values():
    A, B, C = r1_oracle()
    assert (A, B, C) == pytest.approx((50.0, 7.5, 1.25), rel=1e-14)
    # vertex by brute force over the w1 line
    w1 = np.linspace(-2, 3, 500001)
    var = 0.04 * w1**2 + 0.04 * (1 - w1) ** 2
    i = var.argmin()
    assert w1[i] == pytest.approx(0.5, abs=1e-5)
    ret = 0.1 * w1[i] + 0.2 * (1 - w1[i])
    assert ret == pytest.approx(0.15, abs=1e-6)
    assert math.sqrt(var[i]) == pytest.approx(0.1414214, abs=1e-7)


def test_merton_r1(r1):
    mc = merton_coefficients(r1)
    oracle = r1_oracle()
    assert (mc.A, mc.B, mc.C) == pytest.approx(oracle, rel=1e-12)


def test_merton_zero_returns_degenerate():
    with pytest.raises(DegenerateFrontierError):
        merton_coefficients(MomentEstimate(np.zeros(2), np.eye(2)))


def test_merton_sign_symmetry():
    rng = np.random.default_rng(3)
    m = random_instance(rng, 4)
    a = merton_coefficients(m)
    b = merton_coefficients(MomentEstimate(-m.mean, m.cov))
    assert b.A == pytest.approx(a.A, rel=1e-12)
    assert b.C == pytest.approx(a.C, rel=1e-12)
    assert b.B == pytest.approx(-a.B, rel=1e-12)


def test_interpretable_r1():
    ic = interpretable_from_merton(MertonCoefficients(50.0, 7.5, 1.25))
    assert ic.r_mvp == pytest.approx(0.15, rel=1e-14)
    assert ic.sigma_mvp == pytest.approx(0.1414214, abs=1e-7)
    assert ic.u == pytest.approx(0.3535534, abs=1e-7)


def test_interpretable_zero_b():
    assert interpretable_from_merton(MertonCoefficients(2.0, 0.0, 1.0)).r_mvp == 0.0


def test_interpretable_boundary():
    with pytest.raises(DegenerateFrontierError):
        interpretable_from_merton(MertonCoefficients(4.0, 2.0, 1.0))


def test_merton_from_interpretable_examples():
    mc = merton_from_interpretable(InterpretableCoefficients(0.15, math.sqrt(0.02), math.sqrt(0.125)))
    assert (mc.A, mc.B, mc.C) == pytest.approx((50, 7.5, 1.25), rel=1e-12)
    mc = merton_from_interpretable(InterpretableCoefficients(0.0, 1.0, 1.0))
    assert (mc.A, mc.B, mc.C) == (1.0, 0.0, 1.0)
    with pytest.raises(DegenerateFrontierError):
        merton_from_interpretable(InterpretableCoefficients(0.0, 0.0, 1.0))


def test_frontier_sigma_r1(r1):
    ic = coefficients(r1)
    assert frontier_sigma(ic, 0.15) == pytest.approx(0.1414214, abs=1e-7)
    assert frontier_sigma(ic, 0.175) == pytest.approx(0.1581139, abs=1e-7)
    w = np.array([0.25, 0.75])
    assert frontier_sigma(ic, 0.175) == pytest.approx(math.sqrt(w @ R1_COV @ w), rel=1e-12)


@given(st.floats(-1.0, 1.0))
def test_frontier_symmetry(delta):
    ic = InterpretableCoefficients(0.15, 0.1414, 0.3535)
    assert frontier_sigma(ic, 0.15 + delta) == pytest.approx(frontier_sigma(ic, 0.15 - delta), rel=1e-12)


def test_frontier_vertex_is_minimum():
    rng = np.random.default_rng(11)
    for _ in range(20):
        ic = coefficients(random_instance(rng, 5))
        grid = ic.r_mvp + np.linspace(-1, 1, 20001) * ic.u * ic.sigma_mvp
        s = frontier_sigma(ic, grid)
        assert s.min() >= ic.sigma_mvp * (1 - 1e-15)
        assert grid[s.argmin()] == pytest.approx(ic.r_mvp, abs=1e-3 * ic.u * ic.sigma_mvp)


def test_two_frontier_forms_agree():
    rng = np.random.default_rng(12)
    for _ in range(50):
        m = random_instance(rng, int(rng.integers(2, 8)))
        mc = merton_coefficients(m)
        ic = interpretable_from_merton(mc)
        r = rng.normal(ic.r_mvp, 0.5, 50)
        np.testing.assert_allclose(frontier_sigma(ic, r) ** 2, frontier_sigma_merton(mc, r) ** 2, rtol=1e-10)


def test_efficient_weights_r1(r1):
    np.testing.assert_allclose(efficient_weights(r1, 0.15), [0.5, 0.5], atol=1e-14)
    np.testing.assert_allclose(efficient_weights(r1, 0.20), [0.0, 1.0], atol=1e-14)


def test_efficient_weights_at_vertex_is_mvp():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = random_instance(rng, 6)
        ic = coefficients(m)
        np.testing.assert_allclose(efficient_weights(m, ic.r_mvp), min_variance_weights(m), atol=1e-10)


def test_efficient_weights_constraints():
    rng = np.random.default_rng(5)
    for _ in range(30):
        m = random_instance(rng, int(rng.integers(2, 10)))
        ic = coefficients(m)
        for r in rng.normal(ic.r_mvp, 0.3, 10):
            w = efficient_weights(m, r)
            assert w.sum() == pytest.approx(1.0, abs=1e-10)
            assert w @ m.mean == pytest.approx(r, abs=1e-10)
            assert math.sqrt(w @ m.cov @ w) == pytest.approx(frontier_sigma(ic, r), rel=1e-9)


def test_efficient_weights_grid_oracle_n3():
    # with w1 fixed the budget and return constraints pin w2, w3
    rng = np.random.default_rng(6)
    for _ in range(5):
        m = random_instance(rng, 3)
        ic = coefficients(m)
        target = ic.r_mvp + 0.5 * ic.u * ic.sigma_mvp
        w = efficient_weights(m, target)
        lo, hi = w[0] - 5, w[0] + 5
        w1 = np.linspace(lo, hi, 200001)
        M = np.array([[1.0, 1.0], [m.mean[1], m.mean[2]]])
        rhs = np.vstack([1 - w1, target - m.mean[0] * w1])
        w23 = np.linalg.solve(M, rhs)
        W = np.vstack([w1, w23])
        var = np.einsum("ik,ij,jk->k", W, m.cov, W)
        assert var.min() == pytest.approx(w @ m.cov @ w, rel=1e-4)


def test_efficient_weights_degenerate():
    m = MomentEstimate(np.array([0.1, 0.1]), np.eye(2))
    with pytest.raises(DegenerateFrontierError):
        coefficients(m)
    with pytest.raises(DegenerateFrontierError):
        efficient_weights(m, 0.1)


def test_tangency_r1(r1):
    ic = coefficients(r1)
    tp = tangency_from_coefficients(ic, R1_RF)
    assert tp.ret == pytest.approx(0.175, rel=1e-12)
    assert tp.sigma == pytest.approx(0.1581139, abs=1e-7)
    point, w = tangency_numeric(r1, R1_RF)
    np.testing.assert_allclose(w, [0.25, 0.75], atol=1e-14)
    assert point.ret == pytest.approx(0.175, rel=1e-12)
    # Sharpe grid oracle
    grid = np.linspace(0.15, 0.5, 10000)
    s = (grid - R1_RF) / frontier_sigma(ic, grid)
    assert grid[s.argmax()] == pytest.approx(0.175, abs=1e-4)


def test_tangency_vertical_cml():
    ic = InterpretableCoefficients(0.15, 0.14, 0.35)
    with pytest.raises(NoTangencyError):
        tangency_from_coefficients(ic, 0.15 - 1e-16)
    with pytest.raises(NoTangencyError):
        tangency_from_coefficients(ic, 0.2)


def test_tangency_numeric_boundary(r1):
    mc = merton_coefficients(r1)
    with pytest.raises(NoTangencyError):
        tangency_numeric(r1, mc.B / mc.A)


def test_tangency_zero_rf():
    ic = InterpretableCoefficients(0.02, 0.1, 0.3)
    tp = tangency_from_coefficients(ic, 0.0)
    assert tp.ret == pytest.approx(ic.r_mvp + ic.u**2 * ic.sigma_mvp**2 / ic.r_mvp, rel=1e-12)


def test_u_decomposition_r1(r1):
    mah, cos = u_decomposition(r1)
    assert mah == pytest.approx(1.1180340, abs=1e-7)
    assert cos == pytest.approx(0.9486833, abs=1e-7)
    assert mah * math.sqrt(1 - cos**2) == pytest.approx(0.3535534, abs=1e-7)


def test_u_decomposition_collinear():
    m = MomentEstimate(np.array([0.1, 0.1, 0.1]), np.diag([0.04, 0.09, 0.01]))
    _, cos = u_decomposition(m)
    assert cos == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_u_identity_property(seed, n):
    m = random_instance(np.random.default_rng(seed), n)
    mah, cos = u_decomposition(m)
    mc = merton_coefficients(m)
    assert -1.0 <= cos <= 1.0
    assert mah**2 * (1 - cos**2) + mc.C * cos**2 == pytest.approx(mc.C, rel=1e-10)


def test_euclidean_cosine_fails_identity():
    # non-identity covariance, so the V^-1 and Euclidean inner products differ
    m = MomentEstimate(np.array([0.05, 0.20]), np.array([[0.04, 0.01], [0.01, 0.09]]))
    ic = coefficients(m)
    mah, _ = u_decomposition(m)
    u_euclid = mah * math.sqrt(1 - euclidean_cosine(m.mean) ** 2)
    assert abs(u_euclid - ic.u) > 1e-3


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 1), st.floats(1e-3, 2), st.floats(-10, 10))
def test_interpretable_round_trip(sigma, u, z):
    # r_mvp is drawn within ten "sigma * u" of zero; beyond that C = u^2 + (r/sigma)^2
    # is dominated by the second term and AC - B^2 cancels catastrophically
    ic = InterpretableCoefficients(z * sigma * u, sigma, u)
    back = interpretable_from_merton(merton_from_interpretable(ic))
    assert back.r_mvp == pytest.approx(ic.r_mvp, rel=1e-12, abs=1e-300)
    assert back.sigma_mvp == pytest.approx(sigma, rel=1e-12)
    assert back.u == pytest.approx(u, rel=1e-12)


# --------------------------------------------------------------------------
# moments and rolling series


def test_moments_one_asset_l2():
    panel = panel_from([0.01, 0.03])
    m = estimate_moments(panel, panel.dates[-1], 2)
    assert m.mean[0] == pytest.approx(0.02)
    assert m.cov[0, 0] == pytest.approx(2e-4, rel=1e-12)


def test_moments_zero_returns_singular():
    panel = panel_from(np.zeros((21, 2)))
    with pytest.raises(SingularCovarianceError):
        estimate_moments(panel, panel.dates[-1], 21)


def test_moments_insufficient_history():
    panel = panel_from(np.zeros((10, 2)))
    with pytest.raises(InsufficientHistoryError):
        estimate_moments(panel, panel.dates[-1], 21)


def test_moments_match_numpy():
    rng = np.random.default_rng(8)
    panel = panel_from(rng.normal(0, 0.01, (100, 4)))
    m = estimate_moments(panel, panel.dates[60], 21)
    window = panel.returns[40:61]
    np.testing.assert_allclose(m.mean, window.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(m.cov, np.cov(window.T, ddof=1), rtol=1e-12)
    assert m.window_len == 21 and m.as_of == panel.dates[60]


def test_conditioning_ridge():
    v = np.array([[1.0, 1.0], [1.0, 1.0]])
    cond, ridge = condition_covariance(v)
    assert ridge == pytest.approx(1e-10)
    assert np.linalg.eigvalsh(cond).min() > 0
    cond, ridge = condition_covariance(np.eye(3))
    assert ridge == 0.0


def test_rolling_moments_match_pointwise():
    rng = np.random.default_rng(9)
    panel = panel_from(rng.normal(0, 0.01, (80, 3)))
    rm = rolling_moments(panel, 21, chunk=7)
    assert len(rm) == 60
    for i in (0, 17, 59):
        m = estimate_moments(panel, rm.dates[i], 21)
        np.testing.assert_allclose(rm.mean[i], m.mean, rtol=1e-12)
        np.testing.assert_allclose(rm.cov[i], m.cov, rtol=1e-10, atol=1e-18)


def test_rolling_constant_panel():
    rng = np.random.default_rng(10)
    block = rng.normal(0.001, 0.01, (21, 3))
    panel = panel_from(np.vstack([block, block, block]))
    series = rolling_coefficients(panel, 21)
    # every 21-row window is a permutation of the same rows
    np.testing.assert_allclose(series.r_mvp, series.r_mvp[0], rtol=1e-9)
    np.testing.assert_allclose(series.u, series.u[0], rtol=1e-9)


def test_rolling_counting():
    rng = np.random.default_rng(13)
    panel = panel_from(rng.normal(0, 0.01, (22, 2)))
    assert len(rolling_coefficients(panel, 21)) == 2


def test_rolling_deterministic_and_consistent():
    rng = np.random.default_rng(14)
    panel = panel_from(rng.normal(0.0005, 0.01, (120, 4)))
    a = rolling_coefficients(panel, 21)
    b = rolling_coefficients(panel, 21)
    np.testing.assert_array_equal(a.as_array(), b.as_array())
    ic = coefficients(estimate_moments(panel, a.dates[30], 21))
    assert a.record(30).u == pytest.approx(ic.u, rel=1e-9)
    assert a.record(30).r_mvp == pytest.approx(ic.r_mvp, rel=1e-9, abs=1e-15)


def test_rolling_excludes_degenerate_dates():
    rng = np.random.default_rng(15)
    ret = rng.normal(0, 0.01, (40, 2))
    ret[10:35] = 0.0  # zero-variance stretch
    panel = panel_from(ret)
    series = rolling_coefficients(panel, 21)
    assert len(series) < 20
    assert series.excluded
    assert all(isinstance(v, str) for v in series.excluded.values())


def test_coefficient_series_csv(tmp_path):
    rng = np.random.default_rng(16)
    series = rolling_coefficients(panel_from(rng.normal(0, 0.01, (40, 3))), 21)
    path = tmp_path / "c.csv"
    series.to_csv(path)
    assert path.read_text().splitlines()[0] == "date,r_mvp,sigma_mvp,u,window_len"
    back = CoefficientSeries.from_csv(path)
    np.testing.assert_array_equal(back.as_array(), series.as_array())
    np.testing.assert_array_equal(back.dates, series.dates)


def test_frontier_curve_vertex(r1):
    ic = coefficients(r1)
    sig, ret = frontier_curve(ic, 201)
    i = sig.argmin()
    assert ret[i] == pytest.approx(0.15, abs=1e-12)
    assert sig[i] == pytest.approx(0.1414214, abs=1e-7)


def test_portfolio_point(r1):
    p = portfolio_point(r1, np.array([0.25, 0.75]))
    assert p.ret == pytest.approx(0.175)
    assert p.sigma == pytest.approx(0.1581139, abs=1e-7)
