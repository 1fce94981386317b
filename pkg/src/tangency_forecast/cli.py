"""Command-line entry point: ``tangency-forecast <command> --config FILE``.

Commands
--------
frontier   frontier curve, coefficients, tangency and projection on one date
coeffs     rolling coefficient series for the lookback and feature windows
forecast   online forecast log and out-of-sample R^2 table
backtest   strategy and benchmark runs, metrics and alpha tables
synth      write a synthetic data set plus a config that runs on it

Each command writes into ``out_dir``; outputs are staged in a temporary
directory and moved into place only when the whole command succeeds. On
failure a single ``error: <Type>: <message>`` line goes to stderr and the
exit status is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import report
from .backtest import alpha_regression, compute_metrics, run_benchmarks, run_strategy
from .config import RunConfig, load_config
from .data import (
    FetchError,
    RiskFreeSeries,
    ReturnPanel,
    align_panels,
    fetch_prices,
    load_price_csv,
    load_risk_free,
    to_ln_returns,
)
from .forecast import ForecastError, build_dataset, fit, predict, run_online, update_online
from .frontier import (
    FrontierError,
    coefficients,
    coefficients_from_moments,
    estimate_moments,
    frontier_curve,
    merton_coefficients,
    min_variance_weights,
    rolling_coefficients,
    rolling_moments,
    tangency_from_coefficients,
    tangency_numeric,
)
from .projection import solve_min_distance
from .synthetic import make_fixture, write_fixture

logger = logging.getLogger(__name__)


@dataclass
class Inputs:
    returns: ReturnPanel
    rf: RiskFreeSeries
    index: ReturnPanel | None


def load_inputs(cfg: RunConfig) -> Inputs:
    """Load prices (files or provider), the risk-free series and the optional
    index/bond file, intersected on common dates."""
    if cfg.prices:
        panels = [load_price_csv(p) for p in cfg.prices]
    else:
        result = fetch_prices(
            cfg.fetch_url, cfg.fetch_symbols, cfg.fetch_start, cfg.fetch_end, cache_dir=cfg.cache_dir
        )
        if result.failures:
            raise FetchError(f"failed symbols: {', '.join(sorted(result.failures))}")
        panels = [result.panel]
    assets = align_panels(panels)
    n_assets = len(assets.symbols)
    if cfg.index_prices is not None:
        assets = align_panels([assets, load_price_csv(cfg.index_prices)])
    returns = to_ln_returns(assets)
    index = None
    if cfg.index_prices is not None:
        index = ReturnPanel(returns.dates, returns.symbols[n_assets:], returns.returns[:, n_assets:])
        returns = ReturnPanel(returns.dates, returns.symbols[:n_assets], returns.returns[:, :n_assets])
    if cfg.symbols:
        returns = returns.select(cfg.symbols)

    if cfg.risk_free is not None:
        rf = load_risk_free(cfg.risk_free, percent=cfg.risk_free_percent)
    elif cfg.risk_free_rate is not None:
        rf = RiskFreeSeries.constant(returns.dates, cfg.risk_free_rate)
    else:
        raise ValueError("config needs `risk_free` (file) or `risk_free_rate` (daily decimal)")
    common = np.intersect1d(returns.dates, rf.dates)
    if common.size < 2:
        raise ValueError("assets and risk-free series share fewer than 2 dates")
    returns = returns.restrict(common)
    if index is not None:
        index = index.restrict(common)
    return Inputs(returns, rf.restrict(common), index)


def _staged(out_dir: Path):
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=".staging-", dir=out_dir.parent))


def _commit(stage: Path, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f in sorted(stage.iterdir()):
        dest = out_dir / f.name
        shutil.move(str(f), dest)
        written.append(dest)
    stage.rmdir()
    return written


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _rf_at(rf: RiskFreeSeries, day) -> float:
    i = int(np.searchsorted(rf.dates, np.datetime64(day, "D"), side="right")) - 1
    if i < 0:
        raise ValueError(f"no risk-free rate on or before {day}")
    return float(rf.rate[i])


# --------------------------------------------------------------------------
# commands


def cmd_frontier(cfg: RunConfig, stage: Path) -> None:
    data = load_inputs(cfg)
    as_of = cfg.as_of if cfg.as_of is not None else data.returns.dates[-1]
    m = estimate_moments(data.returns, as_of, cfg.lookback_len)
    mc = merton_coefficients(m)
    ic = coefficients(m)
    sig, ret = frontier_curve(ic)
    with open(stage / "frontier_curve.csv", "w") as fh:
        fh.write("sigma,ret,branch\n")
        for s, r in zip(sig, ret):
            fh.write(f"{float(s)!r},{float(r)!r},{'efficient' if r >= ic.r_mvp else 'inefficient'}\n")

    rf = _rf_at(data.rf, m.as_of)
    summary = {
        "as_of": str(m.as_of),
        "window_len": cfg.lookback_len,
        "symbols": list(data.returns.symbols),
        "ridge": m.ridge,
        "coefficients": {"r_mvp": ic.r_mvp, "sigma_mvp": ic.sigma_mvp, "u": ic.u},
        "merton": {"A": mc.A, "B": mc.B, "C": mc.C},
        "min_variance_weights": min_variance_weights(m).tolist(),
        "rf": rf,
    }
    try:
        tp = tangency_from_coefficients(ic, rf)
        _, w = tangency_numeric(m, rf)
        summary["tangency"] = {"sigma": tp.sigma, "ret": tp.ret, "weights": w.tolist()}
    except FrontierError as exc:
        summary["tangency"] = None
        summary["tangency_error"] = str(exc)

    summary["projection"] = None
    if cfg.in_sample_end is not None and m.as_of > cfg.in_sample_end:
        try:
            proj_row = _projection_on(cfg, data, m, ic, rf)
            report.write_projection_log([proj_row], stage / "projection.csv")
            day, ftp, proj = proj_row
            summary["projection"] = {
                "forecast_tangency": {"sigma": ftp.sigma, "ret": ftp.ret},
                "point": {"sigma": proj.point.sigma, "ret": proj.point.ret},
                "distance": proj.distance,
                "method": proj.method,
                "iterations": proj.iterations,
                "clamped": bool(proj.clamped),
            }
        except (FrontierError, ForecastError) as exc:
            summary["projection_error"] = str(exc)
    _dump_json(summary, stage / "frontier.json")


def _projection_on(cfg, data, m, ic, rf):
    panel = data.returns.restrict(data.returns.dates[data.returns.dates <= m.as_of])
    short = coefficients_from_moments(rolling_moments(panel, cfg.lookback_len))
    long = rolling_coefficients(panel, cfg.feature_window)
    ds = build_dataset(long, short, panel, horizon=cfg.forecast_horizon, include_unmatured=True)
    model = fit(ds, as_of=cfg.in_sample_end, window=cfg.forecast_window)
    model = update_online(model, ds, m.as_of)
    try:
        i = ds.index_of(m.as_of)
    except KeyError:
        raise ForecastError(f"no forecast features on {m.as_of}") from None
    rec = predict(model, ds.features[i], m.as_of)
    ftp = tangency_from_coefficients(rec.coefficients, rf)
    return m.as_of, ftp, solve_min_distance(ic, ftp, sigma_weight=cfg.sigma_weight)


def cmd_coeffs(cfg: RunConfig, stage: Path) -> None:
    data = load_inputs(cfg)
    for window in dict.fromkeys((cfg.lookback_len, cfg.feature_window)):
        series = rolling_coefficients(data.returns, window)
        series.to_csv(stage / f"coeffs_{window}.csv")


def cmd_forecast(cfg: RunConfig, stage: Path) -> None:
    if cfg.in_sample_end is None:
        raise ValueError("forecast needs `in_sample_end`")
    data = load_inputs(cfg)
    short = rolling_coefficients(data.returns, cfg.lookback_len)
    long = rolling_coefficients(data.returns, cfg.feature_window)
    ds = build_dataset(long, short, data.returns, horizon=cfg.forecast_horizon, include_unmatured=True)
    log, model = run_online(ds, cfg.in_sample_end, window=cfg.forecast_window)
    log.to_csv(stage / "forecast_log.csv")
    eqs = report.equation_labels(cfg.forecast_horizon, cfg.lookback_len, cfg.feature_window)
    report.write_r2_table(log.r2(), eqs, stage)
    (stage / "model.json").write_text(model.to_json() + "\n")


def cmd_backtest(cfg: RunConfig, stage: Path) -> None:
    data = load_inputs(cfg)
    if data.index is None:
        raise ValueError("backtest needs `index_prices` for the index and 60/40 benchmarks")
    sc = cfg.strategy()
    results = {"min_distance": run_strategy(sc, data.returns, data.rf)}
    results.update(run_benchmarks(sc, data.returns, data.rf, data.index))
    for key, res in results.items():
        res.to_csv(stage / f"results_{key}.csv")
    report.write_wealth(results, stage)
    report.write_projection_log(results["min_distance"].projections, stage / "projections.csv")

    labels = report.portfolio_labels(cfg.lookback_len, cfg.post_hoc_leverage_multiplier, cfg.index_symbol)
    metrics = {k: compute_metrics(r, data.rf) for k, r in results.items()}
    report.write_metrics(metrics, labels, stage)
    alphas = {
        k: alpha_regression(results["min_distance"], r, data.rf) for k, r in results.items() if k != "min_distance"
    }
    report.write_alpha(alphas, report.alpha_labels(cfg.lookback_len, cfg.index_symbol), stage)


def cmd_synth(args, out_dir: Path, stage: Path) -> None:
    fx = make_fixture(n_days=args.n_days, seed=args.seed)
    write_fixture(fx, stage)
    (stage / "config.cfg").write_text(
        "# synthetic market written by `tangency-forecast synth`\n"
        "prices = prices.csv\n"
        "index_prices = index.csv\n"
        "risk_free = rf.csv\n"
        "index_symbol = INDEX\n"
        "bond_symbol = BOND\n"
        f"in_sample_end = {fx.in_sample_end}\n"
        "lookback_len = 21\n"
        "forecast_horizon = 21\n"
        "feature_window = 252\n"
        "max_leverage = 1.5\n"
        "cost_rate = 0.01\n"
        "out_dir = out\n"
        f"seed = {args.seed}\n"
    )


COMMANDS = {
    "frontier": cmd_frontier,
    "coeffs": cmd_coeffs,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tangency-forecast", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--as-of")
        p.add_argument("--out-dir")
        p.add_argument("--seed", type=int)
        p.add_argument("--cost-rate", type=float)
        p.add_argument("--max-leverage", type=float)
    p = sub.add_parser("synth")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-days", type=int, default=1200)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    stage = None
    try:
        if args.command == "synth":
            out_dir = args.out_dir
            stage = _staged(out_dir)
            cmd_synth(args, out_dir, stage)
        else:
            overrides = {
                "as_of": args.as_of,
                "out_dir": args.out_dir,
                "seed": args.seed,
                "cost_rate": args.cost_rate,
                "max_leverage": args.max_leverage,
            }
            cfg = load_config(args.config, overrides)
            out_dir = cfg.out_dir
            stage = _staged(out_dir)
            COMMANDS[args.command](cfg, stage)
        _commit(stage, out_dir)
        stage = None
    except (ValueError, OSError, FetchError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    finally:
        if stage is not None:
            shutil.rmtree(stage, ignore_errors=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
