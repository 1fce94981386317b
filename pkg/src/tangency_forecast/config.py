"""Flat ``key = value`` run configuration files.

Blank lines and ``#`` comments are ignored. Relative paths resolve against
the directory holding the config file. Unknown keys are an error so typos
do not silently fall back to defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .backtest import StrategyConfig


class ConfigError(ValueError):
    pass


_PATH_KEYS = ("prices", "risk_free", "index_prices", "out_dir", "cache_dir")
_DATE_KEYS = ("in_sample_end", "out_of_sample_end", "as_of", "fetch_start", "fetch_end")


@dataclass
class RunConfig:
    prices: list[Path] = field(default_factory=list)
    symbols: tuple[str, ...] | None = None
    risk_free: Path | None = None
    risk_free_percent: bool = True
    risk_free_rate: float | None = None
    index_prices: Path | None = None
    index_symbol: str = "INDEX"
    bond_symbol: str = "BOND"
    in_sample_end: np.datetime64 | None = None
    out_of_sample_end: np.datetime64 | None = None
    as_of: np.datetime64 | None = None
    lookback_len: int = 21
    forecast_horizon: int = 21
    feature_window: int = 252
    max_leverage: float = 1.5
    cost_rate: float = 0.01
    post_hoc_leverage_multiplier: float = 1.0
    forecast_window: int | None = None
    sigma_weight: float = 1.0
    out_dir: Path = Path("out")
    seed: int = 0
    fetch_url: str | None = None
    fetch_symbols: tuple[str, ...] | None = None
    fetch_start: np.datetime64 | None = None
    fetch_end: np.datetime64 | None = None
    cache_dir: Path | None = None

    def validate(self) -> None:
        if self.in_sample_end is not None and self.out_of_sample_end is not None:
            if self.out_of_sample_end <= self.in_sample_end:
                raise ConfigError("out_of_sample_end must come after in_sample_end")
        if self.fetch_start is not None and self.fetch_end is not None and self.fetch_end < self.fetch_start:
            raise ConfigError("fetch_end precedes fetch_start")
        if not self.prices and not self.fetch_symbols:
            raise ConfigError("config needs `prices` files or `fetch_symbols`")

    def strategy(self) -> StrategyConfig:
        return StrategyConfig(
            lookback_len=self.lookback_len,
            forecast_horizon=self.forecast_horizon,
            feature_window=self.feature_window,
            max_leverage=self.max_leverage,
            cost_rate=self.cost_rate,
            post_hoc_leverage_multiplier=self.post_hoc_leverage_multiplier,
            in_sample_end=self.in_sample_end,
            out_of_sample_end=self.out_of_sample_end,
            symbols=self.symbols,
            sigma_weight=self.sigma_weight,
            forecast_window=self.forecast_window,
            index_symbol=self.index_symbol,
            bond_symbol=self.bond_symbol,
        )


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _coerce(key: str, raw: str, base: Path):
    raw = raw.strip()
    if key == "prices":
        return [base / p.strip() for p in raw.split(",") if p.strip()]
    if key in ("symbols", "fetch_symbols"):
        return tuple(s.strip() for s in raw.split(",") if s.strip()) or None
    if raw == "":
        return None
    if key in _PATH_KEYS:
        return base / raw
    if key in _DATE_KEYS:
        try:
            return np.datetime64(raw, "D")
        except ValueError:
            raise ConfigError(f"{key}: not a date: {raw!r}") from None
    if key == "risk_free_percent":
        return _parse_bool(raw)
    if key in ("lookback_len", "forecast_horizon", "feature_window", "forecast_window", "seed"):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: not an integer: {raw!r}") from None
    if key in ("max_leverage", "cost_rate", "post_hoc_leverage_multiplier", "sigma_weight", "risk_free_rate"):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {raw!r}") from None
    return raw


KNOWN_KEYS = frozenset(f.name for f in fields(RunConfig))


def parse_config_text(text: str, base: Path = Path(".")) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, base)
    return values


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` and apply ``overrides`` (already-typed values, or strings
    that are coerced like file values)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values = parse_config_text(path.read_text(), path.parent)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown override {key!r}")
        values[key] = _coerce(key, val, Path.cwd()) if isinstance(val, str) else val
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
