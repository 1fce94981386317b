"""Loading, aligning and transforming daily price and risk-free data.

Prices are adjusted closes; returns are daily natural-log returns. The
risk-free series is stored as decimal per-day fractions (the Fama/French
data library publishes percent, so loaders divide by 100 by default).
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import os
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DATA_URL_ENV = "TANGENCY_FORECAST_DATA_URL"


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class FetchError(RuntimeError):
    """Raised when no symbol could be fetched from the provider."""


class TransportError(FetchError):
    """The provider could not be reached at all."""


class SymbolNotFoundError(FetchError):
    """The provider has no data for a requested symbol."""


def _as_dates(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


def _check_increasing(dates: np.ndarray, what: str) -> None:
    if dates.size > 1 and np.any(dates[1:] <= dates[:-1]):
        raise DataError(f"{what}: dates must be strictly increasing")


@dataclass(frozen=True)
class PricePanel:
    """Adjusted closing prices, one column per asset."""

    dates: np.ndarray
    symbols: tuple[str, ...]
    prices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "symbols", tuple(self.symbols))
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim == 1:
            prices = prices[:, None]
        object.__setattr__(self, "prices", prices)
        if prices.shape != (self.dates.size, len(self.symbols)):
            raise DataError(
                f"price matrix shape {prices.shape} does not match "
                f"{self.dates.size} dates x {len(self.symbols)} symbols"
            )
        _check_increasing(self.dates, "PricePanel")
        if not np.all(np.isfinite(prices)):
            raise DataError("PricePanel contains missing or non-finite prices")
        if np.any(prices <= 0):
            raise DataError("PricePanel contains non-positive prices")

    def __len__(self) -> int:
        return self.dates.size


@dataclass(frozen=True)
class ReturnPanel:
    """Daily log returns; each row is dated at the later of its two prices."""

    dates: np.ndarray
    symbols: tuple[str, ...]
    returns: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        object.__setattr__(self, "symbols", tuple(self.symbols))
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim == 1:
            returns = returns[:, None]
        object.__setattr__(self, "returns", returns)
        if returns.shape != (self.dates.size, len(self.symbols)):
            raise DataError(
                f"return matrix shape {returns.shape} does not match "
                f"{self.dates.size} dates x {len(self.symbols)} symbols"
            )
        _check_increasing(self.dates, "ReturnPanel")
        if not np.all(np.isfinite(returns)):
            raise DataError("ReturnPanel contains non-finite returns")

    def __len__(self) -> int:
        return self.dates.size

    @property
    def n_assets(self) -> int:
        return len(self.symbols)

    def select(self, symbols: Sequence[str]) -> "ReturnPanel":
        idx = [self.symbols.index(s) for s in symbols]
        return ReturnPanel(self.dates, tuple(symbols), self.returns[:, idx])

    def restrict(self, dates) -> "ReturnPanel":
        mask = np.isin(self.dates, _as_dates(dates))
        return ReturnPanel(self.dates[mask], self.symbols, self.returns[mask])

    def column(self, symbol: str) -> np.ndarray:
        return self.returns[:, self.symbols.index(symbol)]


@dataclass(frozen=True)
class RiskFreeSeries:
    """Daily risk-free return as a decimal fraction per day."""

    dates: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", _as_dates(self.dates))
        rate = np.asarray(self.rate, dtype=float).ravel()
        object.__setattr__(self, "rate", rate)
        if rate.size != self.dates.size:
            raise DataError("risk-free dates and rates differ in length")
        _check_increasing(self.dates, "RiskFreeSeries")
        if not np.all(np.isfinite(rate)):
            raise DataError("risk-free series contains non-finite rates")

    def __len__(self) -> int:
        return self.dates.size

    def restrict(self, dates) -> "RiskFreeSeries":
        mask = np.isin(self.dates, _as_dates(dates))
        return RiskFreeSeries(self.dates[mask], self.rate[mask])

    @classmethod
    def constant(cls, dates, rate: float) -> "RiskFreeSeries":
        dates = _as_dates(dates)
        return cls(dates, np.full(dates.size, float(rate)))


@dataclass(frozen=True)
class PriceSchema:
    """How to read a price CSV.

    ``columns`` maps output symbol -> CSV column; ``None`` takes every
    non-date column under its own header name. ``date_format`` is a
    ``strptime`` pattern; ``None`` accepts ISO-8601 (and compact YYYYMMDD).
    """

    date_column: str = "date"
    columns: Mapping[str, str] | None = None
    date_format: str | None = None


def parse_date(text: str, fmt: str | None = None) -> dt.date:
    text = text.strip()
    if fmt is not None:
        return dt.datetime.strptime(text, fmt).date()
    if len(text) == 8 and text.isdigit():
        return dt.date(int(text[:4]), int(text[4:6]), int(text[6:]))
    return dt.date.fromisoformat(text[:10])


def _read_rows(source: str | os.PathLike | io.TextIOBase):
    if isinstance(source, io.TextIOBase):
        return list(csv.reader(source))
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _find_column(header: list[str], name: str) -> int:
    stripped = [h.strip() for h in header]
    if name in stripped:
        return stripped.index(name)
    lowered = [h.lower() for h in stripped]
    if name.lower() in lowered:
        return lowered.index(name.lower())
    raise DataError(f"missing column {name!r} (have {stripped})")


def load_price_csv(path, schema: PriceSchema | None = None) -> PricePanel:
    """Read a ``date,<symbol>[,<symbol>...]`` price file.

    Rows with an empty price cell are dropped, which keeps the strict
    date-intersection policy within a wide file. Duplicate dates,
    unparseable cells and non-positive prices raise :class:`DataError`
    naming the CSV line.
    """
    schema = schema or PriceSchema()
    rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path}: empty file, header row expected")
    header = rows[0]
    date_idx = _find_column(header, schema.date_column)
    if schema.columns is None:
        symbols = [h.strip() for i, h in enumerate(header) if i != date_idx]
        col_idx = [i for i in range(len(header)) if i != date_idx]
    else:
        symbols = list(schema.columns)
        col_idx = [_find_column(header, c) for c in schema.columns.values()]
    if not symbols:
        raise DataError(f"{path}: no price columns")

    dates, values, seen = [], [], set()
    dropped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            day = parse_date(row[date_idx], schema.date_format)
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: unparseable date ({exc})") from None
        if day in seen:
            raise DataError(f"{path}:{lineno}: duplicate date {day}")
        seen.add(day)
        cells = [row[i].strip() if i < len(row) else "" for i in col_idx]
        if any(c == "" for c in cells):
            dropped += 1
            continue
        try:
            prices = [float(c) for c in cells]
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable price in {cells}") from None
        if any(not np.isfinite(p) for p in prices):
            raise DataError(f"{path}:{lineno}: non-finite price")
        if any(p <= 0 for p in prices):
            raise DataError(f"{path}:{lineno}: non-positive price")
        dates.append(day)
        values.append(prices)
    if dropped:
        logger.info("%s: dropped %d rows with missing prices", path, dropped)
    if not dates:
        raise DataError(f"{path}: no data rows")

    order = np.argsort(_as_dates(dates), kind="stable")
    return PricePanel(
        _as_dates(dates)[order],
        tuple(symbols),
        np.asarray(values, dtype=float).reshape(len(dates), len(symbols))[order],
    )


def align_panels(panels: Sequence[PricePanel]) -> PricePanel:
    """Merge panels column-wise on the intersection of their dates."""
    if not panels:
        raise DataError("align_panels needs at least one panel")
    for p in panels:
        if len(p) == 0:
            raise DataError("cannot align an empty panel")
    symbols = [s for p in panels for s in p.symbols]
    if len(set(symbols)) != len(symbols):
        raise DataError(f"duplicate symbols across panels: {symbols}")
    common = panels[0].dates
    for p in panels[1:]:
        common = np.intersect1d(common, p.dates)
    if common.size == 0:
        raise DataError("panels share no common dates")
    cols = [p.prices[np.isin(p.dates, common)] for p in panels]
    return PricePanel(common, tuple(symbols), np.hstack(cols))


def to_ln_returns(panel: PricePanel) -> ReturnPanel:
    if len(panel) < 2:
        raise DataError("need at least two price rows to form returns")
    logp = np.log(panel.prices)
    return ReturnPanel(panel.dates[1:], panel.symbols, np.diff(logp, axis=0))


def load_risk_free(
    path,
    *,
    date_column: str = "date",
    rate_column: str = "rf",
    percent: bool = True,
    date_format: str | None = None,
) -> RiskFreeSeries:
    """Read a daily risk-free CSV (``date,rf``; percent per day by default).

    Compact ``YYYYMMDD`` dates, as in the Fama/French daily factor file,
    are accepted. Rates are returned as decimals.
    """
    rows = _read_rows(path)
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    d_idx = _find_column(header, date_column)
    r_idx = _find_column(header, rate_column)
    scale = 0.01 if percent else 1.0
    dates, rates = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            day = parse_date(row[d_idx], date_format)
            rate = float(row[r_idx])
        except (ValueError, IndexError):
            raise DataError(f"{path}:{lineno}: unparseable row {row}") from None
        if not np.isfinite(rate):
            raise DataError(f"{path}:{lineno}: non-finite rate")
        dates.append(day)
        rates.append(rate * scale)
    if not dates:
        raise DataError(f"{path}: no data rows")
    d = _as_dates(dates)
    order = np.argsort(d, kind="stable")
    return RiskFreeSeries(d[order], np.asarray(rates)[order])


def align_returns(
    panel: ReturnPanel, rf: RiskFreeSeries, *others: ReturnPanel
) -> tuple[ReturnPanel, RiskFreeSeries, tuple[ReturnPanel, ...]]:
    """Restrict a return panel, the risk-free series and any extra panels to
    their common dates."""
    common = np.intersect1d(panel.dates, rf.dates)
    for o in others:
        common = np.intersect1d(common, o.dates)
    if common.size == 0:
        raise DataError("returns and risk-free series share no dates")
    return (
        panel.restrict(common),
        rf.restrict(common),
        tuple(o.restrict(common) for o in others),
    )


def write_price_csv(panel: PricePanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.symbols])
        for d, row in zip(panel.dates, panel.prices):
            w.writerow([str(d), *(repr(float(x)) for x in row)])


# --------------------------------------------------------------------------
# HTTP fetching

BarParser = Callable[[bytes, str], tuple[list[dt.date], list[float]]]

_CLOSE_NAMES = ("adj_close", "adj close", "adjclose", "adjusted_close", "close")


def parse_csv_bars(payload: bytes, symbol: str) -> tuple[list[dt.date], list[float]]:
    """Daily bars as CSV with a date column and an adjusted-close column."""
    text = payload.decode("utf-8-sig")
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r]
    if len(rows) < 2:
        raise SymbolNotFoundError(f"{symbol}: empty response")
    header = [h.strip().lower() for h in rows[0]]
    d_idx = header.index("date") if "date" in header else 0
    for name in (*_CLOSE_NAMES, symbol.lower()):
        if name in header:
            c_idx = header.index(name)
            break
    else:
        if len(header) != 2:
            raise DataError(f"{symbol}: no adjusted close column in {rows[0]}")
        c_idx = 1 - d_idx
    dates, closes = [], []
    for row in rows[1:]:
        if not row[c_idx].strip():
            continue
        dates.append(parse_date(row[d_idx]))
        closes.append(float(row[c_idx]))
    return dates, closes


def parse_json_bars(payload: bytes, symbol: str) -> tuple[list[dt.date], list[float]]:
    """Daily bars as a JSON list of objects (or ``{"bars": [...]}``)."""
    data = json.loads(payload)
    if isinstance(data, dict):
        data = data.get("bars", data.get("data", []))
    if not data:
        raise SymbolNotFoundError(f"{symbol}: empty response")
    dates, closes = [], []
    for bar in data:
        keys = {k.lower(): v for k, v in bar.items()}
        close = next((keys[n] for n in _CLOSE_NAMES if n in keys), None)
        if close is None:
            raise DataError(f"{symbol}: bar without adjusted close: {bar}")
        dates.append(parse_date(str(keys["date"])))
        closes.append(float(close))
    return dates, closes


@dataclass
class FetchResult:
    panel: PricePanel
    failures: dict[str, Exception] = field(default_factory=dict)


def fetch_prices(
    endpoint: str | None,
    symbols: Sequence[str],
    start: dt.date | str,
    end: dt.date | str,
    *,
    query_template: str = "{base}/{symbol}?start={start}&end={end}",
    parser: BarParser = parse_csv_bars,
    cache_dir: str | os.PathLike | None = None,
    timeout: float = 30.0,
    max_workers: int = 4,
) -> FetchResult:
    """Download adjusted closes for ``symbols`` and align them.

    Each symbol's bars are snapshotted to ``cache_dir`` as
    ``<symbol>_<start>_<end>.csv``; a present snapshot is used instead of
    the network. Symbols that fail are reported in ``FetchResult.failures``
    while the rest are returned. If every symbol fails, the first error is
    raised.
    """
    base = endpoint or os.environ.get(DATA_URL_ENV)
    if not base:
        raise FetchError(f"no provider URL given and ${DATA_URL_ENV} unset")
    base = base.rstrip("/")
    start, end = str(start), str(end)
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)

    def one(symbol: str) -> PricePanel:
        snap = cache / f"{symbol}_{start}_{end}.csv" if cache is not None else None
        if snap is not None and snap.exists():
            return load_price_csv(snap)
        url = query_template.format(base=base, symbol=symbol, start=start, end=end)
        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 404:
                raise SymbolNotFoundError(f"{symbol}: not found at provider") from None
            raise FetchError(f"{symbol}: HTTP {exc.code}") from None
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{symbol}: cannot reach {base} ({exc})") from None
        dates, closes = parser(payload, symbol)
        if not dates:
            raise SymbolNotFoundError(f"{symbol}: empty response")
        lo, hi = np.datetime64(start[:10], "D"), np.datetime64(end[:10], "D")
        d = _as_dates(dates)
        keep = (d >= lo) & (d <= hi)
        order = np.argsort(d[keep], kind="stable")
        panel = PricePanel(d[keep][order], (symbol,), np.asarray(closes)[keep][order])
        if snap is not None:
            write_price_csv(panel, snap)
        return panel

    results: dict[str, PricePanel] = {}
    failures: dict[str, Exception] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {s: pool.submit(one, s) for s in symbols}
        for s in symbols:
            try:
                results[s] = futures[s].result()
            except (FetchError, DataError) as exc:
                logger.warning("fetch failed for %s: %s", s, exc)
                failures[s] = exc
    if not results:
        raise failures[symbols[0]]
    panel = align_panels([results[s] for s in symbols if s in results])
    return FetchResult(panel, failures)
