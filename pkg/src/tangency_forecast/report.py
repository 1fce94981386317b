"""CSV / JSON / text writers for backtest and forecast tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Mapping

import numpy as np

from .backtest import AlphaReport, BacktestResult, MetricsReport

METRIC_COLUMNS = ("portfolio", "sharpe", "sortino", "annual_return", "max_drawdown")
ALPHA_COLUMNS = ("portfolio", "alpha", "p_value")
R2_COLUMNS = ("model", "oos_r2_pct")
PROJECTION_COLUMNS = (
    "date", "forecast_r", "forecast_sigma", "proj_r", "proj_sigma", "distance", "method", "iterations",
)

RUN_ORDER = ("min_distance", "tangency", "equal_weight", "index", "sixty_forty")


def _window_label(lookback_len: int) -> str:
    return "rolling 1 mo" if lookback_len == 21 else f"rolling {lookback_len}d"


def portfolio_labels(lookback_len: int = 21, multiplier: float = 1.0, index_name: str = "Index") -> dict[str, str]:
    win = _window_label(lookback_len)
    strategy = f"Minimum Distance Portfolio to Tangency {win}"
    if multiplier != 1.0:
        strategy += f" {multiplier:g}x Levered"
    return {
        "min_distance": strategy,
        "tangency": f"Tangency Portfolio {win}",
        "equal_weight": "Equal Weighted",
        "index": f"{index_name} Total Return",
        "sixty_forty": "60/40 Stocks and Bonds",
    }


def alpha_labels(lookback_len: int = 21, index_name: str = "Index") -> dict[str, str]:
    """Row labels of the alpha table, which names the index without the
    "Total Return" suffix."""
    labels = portfolio_labels(lookback_len, 1.0, index_name)
    labels["index"] = index_name
    return labels


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _fmt_text_table(header, rows) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _ordered(mapping: Mapping[str, object]):
    keys = [k for k in RUN_ORDER if k in mapping] + [k for k in mapping if k not in RUN_ORDER]
    return [(k, mapping[k]) for k in keys]


def write_metrics(metrics: Mapping[str, MetricsReport], labels: Mapping[str, str], out_dir) -> None:
    """``metrics.csv``, ``metrics.json`` and the aligned ``metrics.txt``."""
    out = Path(out_dir)
    rows = _ordered(metrics)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for key, m in rows:
            w.writerow([labels.get(key, key), _num(m.sharpe), _num(m.sortino), _num(m.annual_return), _num(m.max_drawdown)])
    payload = [
        {"portfolio": labels.get(k, k), "key": k, "sharpe": m.sharpe, "sortino": m.sortino,
         "annual_return": m.annual_return, "max_drawdown": m.max_drawdown}
        for k, m in rows
    ]
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text_rows = [
        (
            labels.get(k, k),
            f"{m.sharpe:.2f}",
            "n/a" if m.sortino is None else f"{m.sortino:.2f}",
            f"{m.annual_return * 100:.1f}%",
            f"{m.max_drawdown * 100:.1f}%",
        )
        for k, m in rows
    ]
    header = ("Portfolio", "Sharpe Ratio", "Sortino Ratio", "Annual Return", "Max Drawdown")
    (out / "metrics.txt").write_text(_fmt_text_table(header, text_rows))


def format_p_value(p: float) -> str:
    return "<1e-4" if p < 1e-4 else f"{p:.4f}"


def write_alpha(alphas: Mapping[str, AlphaReport], labels: Mapping[str, str], out_dir) -> None:
    out = Path(out_dir)
    rows = _ordered(alphas)
    with open(out / "alpha.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALPHA_COLUMNS)
        for key, a in rows:
            w.writerow([labels.get(key, key), _num(a.alpha), _num(a.p_value)])
    payload = [
        {"portfolio": labels.get(k, k), "key": k, "alpha": a.alpha, "beta": a.beta,
         "p_value": a.p_value, "n_obs": a.n_obs}
        for k, a in rows
    ]
    (out / "alpha.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text_rows = [(labels.get(k, k), f"{a.alpha:.2f}", format_p_value(a.p_value)) for k, a in rows]
    (out / "alpha.txt").write_text(_fmt_text_table(("Portfolio", "Alpha", "p-Value"), text_rows))


def equation_labels(horizon: int, short_len: int, long_len: int) -> list[str]:
    t, lh = f"t+{horizon}", f"({short_len})"
    lo = f"({long_len})"
    return [
        f"r_mvp[{t}]{lh} = b1*r_mvp[t]{lo} + b0",
        f"sigma_mvp[{t}]{lh} = b1*sigma_mvp[t]{lo} + b0",
        f"u[{t}]{lh} = b2*sigma_mvp[t]{lo} + b1*ew_mean[t]{lo} + b0",
    ]


def write_r2_table(r2, equations, out_dir) -> None:
    """Per-equation out-of-sample R^2 as ``r2_table.csv`` and ``r2_table.txt``."""
    out = Path(out_dir)
    with open(out / "r2_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(R2_COLUMNS)
        for eq, v in zip(equations, r2):
            w.writerow([eq, repr(float(v) * 100.0)])
    rows = [(eq, f"{float(v) * 100:.0f}") for eq, v in zip(equations, r2)]
    (out / "r2_table.txt").write_text(_fmt_text_table(("VARX Model", "OoS R2 (%)"), rows))


def write_wealth(results: Mapping[str, BacktestResult], out_dir) -> None:
    """Wealth curves side by side on the union of dates (blank if absent)."""
    rows = _ordered(results)
    dates = np.unique(np.concatenate([r.dates for _, r in rows]))
    cols = []
    for _, r in rows:
        col = np.full(dates.size, np.nan)
        col[np.searchsorted(dates, r.dates)] = r.wealth
        cols.append(col)
    with open(Path(out_dir) / "wealth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *(k for k, _ in rows)])
        for i, d in enumerate(dates):
            w.writerow([str(d), *("" if math.isnan(c[i]) else repr(float(c[i])) for c in cols)])


def write_projection_log(projections, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROJECTION_COLUMNS)
        for day, tp, proj in projections:
            w.writerow([
                str(day), repr(float(tp.ret)), repr(float(tp.sigma)),
                repr(float(proj.point.ret)), repr(float(proj.point.sigma)),
                repr(float(proj.distance)), proj.method, proj.iterations,
            ])
