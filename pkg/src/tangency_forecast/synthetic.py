"""Synthetic markets with known moments, for tests and experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PricePanel, ReturnPanel, RiskFreeSeries, write_price_csv


def business_days(start: str, n: int) -> np.ndarray:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    return np.busday_offset(first, np.arange(n))


def stationary_returns(
    mean,
    cov,
    n_days: int,
    *,
    seed: int = 0,
    start: str = "2000-01-03",
    symbols=None,
    match_moments: bool = False,
) -> ReturnPanel:
    """I.i.d. Gaussian daily log returns with the given moments.

    With ``match_moments`` the draws are affinely transformed so that the
    full-sample mean and covariance (denominator ``n - 1``) equal ``mean``
    and ``cov`` exactly. Trailing windows keep their sampling noise; only
    the evaluation-level sampling error is removed.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    rng = np.random.default_rng(seed)
    r = rng.multivariate_normal(mean, cov, size=n_days, method="cholesky")
    if match_moments:
        z = r - r.mean(axis=0)
        whiten = np.linalg.inv(np.linalg.cholesky(np.cov(z, rowvar=False).reshape(mean.size, mean.size)))
        r = z @ whiten.T @ np.linalg.cholesky(cov).T + mean
    if symbols is None:
        symbols = tuple(f"A{i}" for i in range(mean.size))
    return ReturnPanel(business_days(start, n_days), symbols, r)


def prices_from_returns(returns: ReturnPanel, start_price: float = 100.0) -> PricePanel:
    """Cumulate log returns into a price panel, one row longer than ``returns``."""
    first = np.busday_offset(returns.dates[0], -1, roll="backward")
    levels = start_price * np.exp(np.vstack([np.zeros((1, returns.n_assets)), np.cumsum(returns.returns, axis=0)]))
    return PricePanel(np.concatenate([[first], returns.dates]), returns.symbols, levels)


@dataclass
class SyntheticFixture:
    prices: PricePanel
    index_prices: PricePanel
    rf: RiskFreeSeries
    in_sample_end: np.datetime64


def make_fixture(
    n_days: int = 1200,
    n_assets: int = 4,
    *,
    seed: int = 7,
    in_sample_frac: float = 0.5,
    start: str = "2000-01-03",
) -> SyntheticFixture:
    """A small one-factor market in realistic daily units.

    Assets load on a common market factor with idiosyncratic noise. The
    last asset is a low-volatility "bond". The index series is the factor
    itself. The daily risk-free rate is a constant ~2% a year.
    """
    rng = np.random.default_rng(seed)
    n_total = n_days - 1
    market = rng.normal(3e-4, 0.010, n_total)
    betas = np.linspace(0.6, 1.4, n_assets - 1)
    alphas = rng.normal(1e-4, 1e-4, n_assets - 1)
    idio = rng.normal(0.0, 0.008, (n_total, n_assets - 1))
    stocks = alphas + market[:, None] * betas + idio
    bond = rng.normal(1.2e-4, 0.003, n_total) - 0.05 * market
    rets = np.column_stack([stocks, bond])
    symbols = tuple(f"S{i}" for i in range(n_assets - 1)) + ("BOND",)
    dates = business_days(start, n_total)
    panel = ReturnPanel(dates, symbols, rets)
    prices = prices_from_returns(panel)
    index = prices_from_returns(ReturnPanel(dates, ("INDEX",), market[:, None]), start_price=1000.0)
    rf = RiskFreeSeries.constant(prices.dates, 0.02 / 252)
    cut = prices.dates[int(n_days * in_sample_frac)]
    return SyntheticFixture(prices, index, rf, cut)


def write_fixture(fx: SyntheticFixture, directory) -> dict[str, Path]:
    """Write the fixture as CSVs (risk-free in percent per day)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"prices": d / "prices.csv", "index": d / "index.csv", "risk_free": d / "rf.csv"}
    write_price_csv(fx.prices, paths["prices"])
    write_price_csv(fx.index_prices, paths["index"])
    with open(paths["risk_free"], "w") as fh:
        fh.write("date,rf\n")
        for day, r in zip(fx.rf.dates, fx.rf.rate):
            fh.write(f"{day},{r * 100:.10f}\n")
    return paths


def max_sharpe(mean, cov, rf: float) -> float:
    """Population maximum Sharpe ratio per period, ``sqrt(x' V^-1 x)`` with
    ``x = mean - rf``."""
    x = np.asarray(mean, dtype=float) - rf
    return math.sqrt(float(x @ np.linalg.solve(np.asarray(cov, dtype=float), x)))


@dataclass
class ExperimentResult:
    """Annualised Sharpe ratios and average weights of one stationary run."""

    max_sharpe: float
    tangency_sharpe: float
    strategy_sharpe: float
    true_weights: np.ndarray
    tangency_weights: np.ndarray
    strategy_weights: np.ndarray
    n_decisions: int


def stationary_experiment(
    mean=(0.002, 0.004),
    cov=((1e-4, 0.0), (0.0, 1e-4)),
    rf: float = 0.001,
    *,
    n_days: int = 100_000,
    seed: int = 1,
    lookback_len: int = 1260,
    feature_window: int = 2520,
) -> ExperimentResult:
    """Tangency benchmark and min-distance strategy on an i.i.d. market.

    Costs are off and leverage is uncapped, so under stationarity both
    should realise the population maximum Sharpe ratio. Moments are matched
    over the full sample so the only noise left is the strategies' own
    estimation error. The forecast horizon equals the lookback.
    """
    from .backtest import StrategyConfig, compute_metrics, run_strategy, run_tangency
    from .frontier import MomentEstimate, tangency_numeric

    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    panel = stationary_returns(mean, cov, n_days, seed=seed, match_moments=True)
    rf_series = RiskFreeSeries.constant(panel.dates, rf)
    config = StrategyConfig(
        lookback_len=lookback_len,
        forecast_horizon=lookback_len,
        feature_window=feature_window,
        max_leverage=math.inf,
        cost_rate=0.0,
        in_sample_end=panel.dates[feature_window + 3 * lookback_len],
    )
    tangency = run_tangency(config, panel, rf_series)
    strategy = run_strategy(config, panel, rf_series)
    _, w_true = tangency_numeric(MomentEstimate(mean, cov), rf)
    return ExperimentResult(
        max_sharpe(mean, cov, rf) * math.sqrt(252),
        compute_metrics(tangency, rf_series).sharpe,
        compute_metrics(strategy, rf_series).sharpe,
        w_true,
        tangency.weights.mean(axis=0),
        strategy.weights.mean(axis=0),
        len(strategy),
    )
