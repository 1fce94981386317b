"""Daily-rebalanced backtests of the min-distance strategy and benchmarks.

Conventions:

* Weights chosen with data through day ``t`` earn the log return of day
  ``t + 1``; the portfolio log return is ``w . r``.
* Cost on each day is ``cost_rate * sum|w_t - w_{t-1}|`` against the
  previous day's *target* weights (no drift); the first day trades from
  cash, so it pays the full establishment cost.
* Wealth starts at 1 and compounds net log returns, ``W_t = W_{t-1} e^{net_t}``.
* A day whose frontier, forecast, tangency or projection is degenerate
  keeps the previous weights and carries a flag.
* Metrics are annualised with 252 trading days.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import ReturnPanel, RiskFreeSeries
from .forecast import (
    DEFAULT_MASK,
    ForecastError,
    VarxModel,
    build_dataset,
    fit,
    predict,
    update_online,
)
from .frontier import (
    FrontierError,
    coefficients,
    coefficients_from_moments,
    efficient_weights,
    rolling_coefficients,
    rolling_moments,
    tangency_from_coefficients,
    tangency_numeric,
)
from .projection import solve_min_distance

logger = logging.getLogger(__name__)

TRADING_DAYS = 252


class BacktestError(ValueError):
    pass


class MetricsError(ValueError):
    pass


@dataclass
class StrategyConfig:
    lookback_len: int = 21
    forecast_horizon: int = 21
    feature_window: int = 252
    max_leverage: float = 1.5
    cost_rate: float = 0.01
    post_hoc_leverage_multiplier: float = 1.0
    in_sample_end: np.datetime64 | None = None
    out_of_sample_end: np.datetime64 | None = None
    symbols: tuple[str, ...] | None = None
    rebalance: str = "daily"
    sigma_weight: float = 1.0
    forecast_window: int | None = None
    index_symbol: str = "index"
    bond_symbol: str = "bond"
    stock_weight: float = 0.6

    def __post_init__(self):
        if self.max_leverage < 1:
            raise ValueError(f"max_leverage must be >= 1, got {self.max_leverage}")
        if self.cost_rate < 0:
            raise ValueError("cost_rate must be non-negative")
        if min(self.lookback_len, self.forecast_horizon, self.feature_window) < 2:
            raise ValueError("windows must be at least 2 days")
        if self.rebalance != "daily":
            raise ValueError("only daily rebalancing is supported")
        if self.in_sample_end is not None:
            self.in_sample_end = np.datetime64(self.in_sample_end, "D")
        if self.out_of_sample_end is not None:
            self.out_of_sample_end = np.datetime64(self.out_of_sample_end, "D")


@dataclass
class BacktestResult:
    name: str
    dates: np.ndarray
    weights: np.ndarray
    gross: np.ndarray
    cost: np.ndarray
    net: np.ndarray
    wealth: np.ndarray
    turnover: np.ndarray
    flags: list
    projections: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.dates.size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "net_return", "gross_return", "cost", "wealth", "turnover", "flag"])
            for row in zip(self.dates, self.net, self.gross, self.cost, self.wealth, self.turnover, self.flags):
                d, *nums, flag = row
                w.writerow([str(d), *(repr(float(x)) for x in nums), flag])


def _assemble(name, dates, weights, gross, cost, flags, multiplier=1.0, projections=None):
    gross = np.asarray(gross, dtype=float)
    cost = np.asarray(cost, dtype=float)
    net = (gross - cost) * multiplier
    weights = np.asarray(weights, dtype=float)
    prev = np.vstack([np.zeros((1, weights.shape[1])), weights[:-1]]) if len(weights) else weights
    return BacktestResult(
        name,
        np.asarray(dates, dtype="datetime64[D]"),
        weights,
        gross,
        cost,
        net,
        np.exp(np.cumsum(net)),
        np.abs(weights - prev).sum(axis=1) if len(weights) else np.zeros(0),
        list(flags),
        projections or [],
    )


# --------------------------------------------------------------------------
# building blocks


def scale_leverage(w, max_leverage: float) -> np.ndarray:
    """Cap gross exposure at ``max_leverage`` keeping the weights summing to one.

    Shorts are rescaled to total ``(l - 1) / 2`` and longs to
    ``(l - 1) / 2 + 1``; weights already within the cap are returned as is.
    """
    if max_leverage < 1:
        raise ValueError(f"max_leverage must be >= 1, got {max_leverage}")
    w = np.asarray(w, dtype=float)
    gross = np.abs(w).sum()
    if not math.isfinite(max_leverage) or gross <= max_leverage:
        return w.copy()
    neg, pos = w < 0, w > 0
    short_total = (max_leverage - 1.0) / 2.0
    out = np.zeros_like(w)
    out[pos] = w[pos] / w[pos].sum() * (short_total + 1.0)
    if neg.any():
        out[neg] = w[neg] / np.abs(w[neg]).sum() * short_total
    return out


def transaction_cost(w_prev, w_new, rate: float) -> float:
    return float(rate * np.abs(np.asarray(w_new, dtype=float) - np.asarray(w_prev, dtype=float)).sum())


def _oos_indices(config: StrategyConfig, dates: np.ndarray) -> np.ndarray:
    """Decision-day indices: after the in-sample end, with a next day to earn."""
    idx = np.arange(dates.size - 1)
    if config.in_sample_end is not None:
        idx = idx[dates[idx] > config.in_sample_end]
    if config.out_of_sample_end is not None:
        idx = idx[dates[idx + 1] <= config.out_of_sample_end]
    if idx.size == 0:
        raise BacktestError("no out-of-sample decision days")
    return idx


def _rf_on(rf: RiskFreeSeries, dates: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(rf.dates, dates)
    pos_c = np.minimum(pos, rf.dates.size - 1)
    if np.any(pos >= rf.dates.size) or np.any(rf.dates[pos_c] != dates):
        missing = dates[(pos >= rf.dates.size) | (rf.dates[pos_c] != dates)]
        raise BacktestError(f"risk-free rate missing on {missing.size} dates, first {missing[0]}")
    return rf.rate[pos_c]


def _run_daily(name, config, panel, decide):
    """Shared daily loop. ``decide(s)`` returns weights for decision day
    ``s`` or raises a frontier/forecast error to hold the previous ones."""
    idx = _oos_indices(config, panel.dates)
    n = panel.n_assets
    w_prev = np.zeros(n)
    weights, gross, cost, flags = [], [], [], []
    for s in idx:
        flag = ""
        try:
            w = decide(s)
        except (FrontierError, ForecastError) as exc:
            w = w_prev
            flag = f"hold:{type(exc).__name__}"
        weights.append(w)
        gross.append(float(w @ panel.returns[s + 1]))
        cost.append(transaction_cost(w_prev, w, config.cost_rate))
        flags.append(flag)
        w_prev = w
    return idx, weights, gross, cost, flags


# --------------------------------------------------------------------------
# strategies


def prepare_forecaster(config: StrategyConfig, panel: ReturnPanel):
    """Rolling moments/coefficients and the forecasting dataset for ``panel``."""
    rm = rolling_moments(panel, config.lookback_len)
    short = coefficients_from_moments(rm)
    long = rolling_coefficients(panel, config.feature_window)
    dataset = build_dataset(long, short, panel, horizon=config.forecast_horizon, include_unmatured=True)
    return rm, dataset


def run_strategy(
    config: StrategyConfig,
    panel: ReturnPanel,
    rf: RiskFreeSeries,
    model: VarxModel | None = None,
    mask=DEFAULT_MASK,
) -> BacktestResult:
    """Forecasted-tangency / minimum-distance strategy.

    Each decision day: estimate the lookback frontier, update the online
    forecaster with matured targets, forecast the frontier ``horizon`` days
    ahead, locate its tangency point for today's risk-free rate, project
    that point onto today's frontier, and hold the efficient weights at the
    projected return (leverage capped).
    """
    if config.in_sample_end is None:
        raise BacktestError("run_strategy needs config.in_sample_end for the initial fit")
    rm, dataset = prepare_forecaster(config, panel)
    if model is None:
        model = fit(dataset, mask, as_of=config.in_sample_end, window=config.forecast_window)
    rf_rate = _rf_on(rf, panel.dates)
    offset = config.lookback_len - 1
    projections = []
    state = {"model": model}

    def decide(s):
        day = panel.dates[s]
        try:
            state["model"] = update_online(state["model"], dataset, day)
        except ForecastError as exc:
            logger.debug("%s: keeping previous model (%s)", day, exc)
        if s < offset:
            raise FrontierError("not enough lookback history")
        m = rm.estimate(s - offset)
        ic = coefficients(m)
        try:
            i = dataset.index_of(day)
        except KeyError:
            raise ForecastError(f"no forecast features on {day}") from None
        rec = predict(state["model"], dataset.features[i], day)
        tp = tangency_from_coefficients(rec.coefficients, rf_rate[s])
        proj = solve_min_distance(ic, tp, sigma_weight=config.sigma_weight)
        projections.append((day, tp, proj))
        return scale_leverage(efficient_weights(m, proj.point.ret), config.max_leverage)

    idx, weights, gross, cost, flags = _run_daily("strategy", config, panel, decide)
    return _assemble(
        "min_distance", panel.dates[idx + 1], weights, gross, cost, flags,
        config.post_hoc_leverage_multiplier, projections,
    )


def run_tangency(config: StrategyConfig, panel: ReturnPanel, rf: RiskFreeSeries) -> BacktestResult:
    """Daily sample tangency portfolio on the lookback window."""
    rm = rolling_moments(panel, config.lookback_len)
    rf_rate = _rf_on(rf, panel.dates)
    offset = config.lookback_len - 1

    def decide(s):
        if s < offset:
            raise FrontierError("not enough lookback history")
        _, w = tangency_numeric(rm.estimate(s - offset), rf_rate[s])
        return scale_leverage(w, config.max_leverage)

    idx, weights, gross, cost, flags = _run_daily("tangency", config, panel, decide)
    return _assemble("tangency", panel.dates[idx + 1], weights, gross, cost, flags)


def run_fixed_weights(name: str, config: StrategyConfig, panel: ReturnPanel, weights) -> BacktestResult:
    """Constant target weights rebalanced daily."""
    w = np.asarray(weights, dtype=float)
    idx, ws, gross, cost, flags = _run_daily(name, config, panel, lambda s: w)
    return _assemble(name, panel.dates[idx + 1], ws, gross, cost, flags)


def run_passthrough(name: str, config: StrategyConfig, panel: ReturnPanel, symbol: str) -> BacktestResult:
    """Buy-and-hold return of a single series (no trading costs)."""
    idx = _oos_indices(config, panel.dates)
    r = panel.column(symbol)[idx + 1]
    n = idx.size
    return _assemble(name, panel.dates[idx + 1], np.ones((n, 1)), r, np.zeros(n), [""] * n)


def run_benchmarks(
    config: StrategyConfig,
    panel: ReturnPanel,
    rf: RiskFreeSeries,
    index_panel: ReturnPanel,
) -> dict[str, BacktestResult]:
    """The four comparison portfolios over the same decision days.

    ``index_panel`` must share ``panel``'s dates and hold the equity index;
    the bond fund is looked up there first, then in ``panel``.
    """
    if not np.array_equal(index_panel.dates, panel.dates):
        raise BacktestError("index panel dates must match the asset panel")
    if config.index_symbol not in index_panel.symbols:
        raise BacktestError(f"index series {config.index_symbol!r} not provided")
    if config.bond_symbol in index_panel.symbols:
        bond = index_panel.column(config.bond_symbol)
    elif config.bond_symbol in panel.symbols:
        bond = panel.column(config.bond_symbol)
    else:
        raise BacktestError(f"bond series {config.bond_symbol!r} not provided")
    mix = ReturnPanel(
        panel.dates, ("index", "bond"),
        np.column_stack([index_panel.column(config.index_symbol), bond]),
    )
    n = panel.n_assets
    return {
        "tangency": run_tangency(config, panel, rf),
        "equal_weight": run_fixed_weights("equal_weight", config, panel, np.full(n, 1.0 / n)),
        "index": run_passthrough("index", config, index_panel, config.index_symbol),
        "sixty_forty": run_fixed_weights(
            "sixty_forty", config, mix, [config.stock_weight, 1.0 - config.stock_weight]
        ),
    }


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsReport:
    sharpe: float
    sortino: float | None
    annual_return: float
    max_drawdown: float


@dataclass(frozen=True)
class AlphaReport:
    alpha: float
    beta: float
    p_value: float
    n_obs: int


def max_drawdown(wealth) -> float:
    w = np.asarray(wealth, dtype=float)
    return float(np.min(w / np.maximum.accumulate(w)) - 1.0)


def compute_metrics(result: BacktestResult, rf: RiskFreeSeries) -> MetricsReport:
    """Annualised Sharpe and Sortino, geometric annual return, max drawdown.

    Sharpe divides mean excess return by the sample standard deviation of
    net returns. Sortino's downside deviation is the root mean square of
    ``min(excess, 0)`` over all days; it is ``None`` if there is no downside.
    """
    net = result.net
    if net.size < 2:
        raise MetricsError("need at least two returns")
    excess = net - _rf_on(rf, result.dates)
    sd = net.std(ddof=1)
    if not sd > 0:
        raise MetricsError(f"{result.name}: zero return variance, Sharpe undefined")
    ann = math.sqrt(TRADING_DAYS)
    downside = math.sqrt(np.mean(np.minimum(excess, 0.0) ** 2))
    sortino = excess.mean() / downside * ann if downside > 0 else None
    wealth = np.concatenate([[1.0], result.wealth])
    return MetricsReport(
        float(excess.mean() / sd * ann),
        None if sortino is None else float(sortino),
        float(result.wealth[-1] ** (TRADING_DAYS / net.size) - 1.0),
        max_drawdown(wealth),
    )


def alpha_regression(strategy: BacktestResult, benchmark: BacktestResult, rf: RiskFreeSeries) -> AlphaReport:
    """OLS of strategy excess returns on benchmark excess returns.

    ``alpha`` is the daily intercept times 252; ``p_value`` is the
    two-sided t-test of a zero intercept.
    """
    common, si, bi = np.intersect1d(strategy.dates, benchmark.dates, return_indices=True)
    n = common.size
    if n < 3:
        raise MetricsError(f"only {n} overlapping observations")
    r = _rf_on(rf, common)
    y = strategy.net[si] - r
    x = benchmark.net[bi] - r
    if not np.std(x) > 1e-12 * (np.abs(x).max() + np.finfo(float).tiny):
        raise MetricsError("benchmark excess returns have zero variance")
    design = np.column_stack([np.ones(n), x])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([a, b])
    sse = float(resid @ resid)
    scale = float(np.sqrt(np.mean(y * y))) + np.finfo(float).tiny
    if math.sqrt(sse / n) <= 1e-13 * scale:
        p = 1.0 if abs(a) <= 1e-13 * scale else 0.0
    else:
        s2 = sse / (n - 2)
        xtx_inv = np.linalg.inv(design.T @ design)
        se = math.sqrt(s2 * xtx_inv[0, 0])
        p = float(2.0 * stats.t.sf(abs(a / se), n - 2))
    return AlphaReport(float(a * TRADING_DAYS), float(b), p, n)
