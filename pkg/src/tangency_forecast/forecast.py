"""Online masked VARX(1) forecasts of the frontier coefficients.

Each equation regresses a short-window coefficient ``horizon`` days ahead
on long-window features observed today. The feature vector is

    (r_mvp_long, sigma_mvp_long, u_long, ew_mean_long)

where ``ew_mean_long`` is the trailing mean of the equal-weighted daily
return over the long window. A boolean mask selects which features enter
which equation; the default mask is

    r_mvp[t+h]     ~ r_mvp_long[t]
    sigma_mvp[t+h] ~ sigma_mvp_long[t]
    u[t+h]         ~ sigma_mvp_long[t] + ew_mean_long[t]

Equations are fit independently by OLS with an intercept. "Online" means
the model is refit every day on all targets that have matured so far
(expanding window), or optionally on the most recent ``window`` of them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import ReturnPanel
from .frontier import CoefficientSeries, InterpretableCoefficients

FEATURES = ("r_mvp_long", "sigma_mvp_long", "u_long", "ew_mean_long")
TARGETS = ("r_mvp", "sigma_mvp", "u")

DEFAULT_MASK = np.array(
    [
        [True, False, False, False],
        [False, True, False, False],
        [False, True, False, True],
    ]
)

SIGMA_FLOOR = 1e-6
U_FLOOR = 1e-8

_NAT = np.datetime64("NaT", "D")


class ForecastError(ValueError):
    pass


class DegenerateFitError(ForecastError):
    """The design matrix of one equation is rank deficient."""


class NotFittedError(ForecastError):
    pass


@dataclass
class ForecastDataset:
    """Feature rows dated ``t`` with targets dated ``t + horizon``.

    ``target_dates[i]`` is the day target ``i`` becomes observable; rows
    whose target lies beyond the data have ``available[i] = False``, NaN
    targets and a NaT target date.
    """

    dates: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    target_dates: np.ndarray
    horizon: int = 21

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.target_dates = np.asarray(self.target_dates, dtype="datetime64[D]")
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.features.shape[0] != self.dates.size or self.targets.shape[0] != self.dates.size:
            raise ValueError("dataset arrays disagree in length")

    def __len__(self) -> int:
        return self.dates.size

    @property
    def available(self) -> np.ndarray:
        return ~np.isnat(self.target_dates)

    def matured(self, as_of) -> np.ndarray:
        """Rows whose target is observable on ``as_of``."""
        as_of = np.datetime64(as_of, "D")
        return self.available & (self.target_dates <= as_of)

    def index_of(self, date) -> int:
        i = int(np.searchsorted(self.dates, np.datetime64(date, "D")))
        if i >= self.dates.size or self.dates[i] != np.datetime64(date, "D"):
            raise KeyError(f"{date} is not a feature date")
        return i


def equal_weight_mean(panel: ReturnPanel, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing ``window_len``-day mean of the equal-weighted return."""
    ew = panel.returns.mean(axis=1)
    if ew.size < window_len:
        return panel.dates[:0], ew[:0]
    views = np.lib.stride_tricks.sliding_window_view(ew, window_len)
    return panel.dates[window_len - 1 :], views.mean(axis=1)


def build_dataset(
    series_long: CoefficientSeries,
    series_short: CoefficientSeries,
    panel: ReturnPanel,
    *,
    horizon: int = 21,
    include_unmatured: bool = False,
) -> ForecastDataset:
    """Pair long-window features at ``t`` with short-window coefficients at
    ``t + horizon`` (counted in rows of ``panel``).

    By default only rows with an observed target are kept; with
    ``include_unmatured`` the trailing rows without one are kept too, as a
    backtest needs features up to the last day.
    """
    ew_dates, ew = equal_weight_mean(panel, series_long.window_len)
    axis = panel.dates
    feat_dates = np.intersect1d(np.intersect1d(series_long.dates, ew_dates), axis)
    if feat_dates.size == 0:
        raise ForecastError("feature series and panel share no dates")

    li = np.searchsorted(series_long.dates, feat_dates)
    ei = np.searchsorted(ew_dates, feat_dates)
    features = np.column_stack(
        [series_long.r_mvp[li], series_long.sigma_mvp[li], series_long.u[li], ew[ei]]
    )

    pos = np.searchsorted(axis, feat_dates) + horizon
    targets = np.full((feat_dates.size, 3), np.nan)
    target_dates = np.full(feat_dates.size, _NAT)
    inside = pos < axis.size
    cand = axis[np.minimum(pos, axis.size - 1)]
    si = np.searchsorted(series_short.dates, cand)
    si_c = np.minimum(si, max(series_short.dates.size - 1, 0))
    hit = inside & (si < series_short.dates.size) & (series_short.dates[si_c] == cand)
    short = series_short.as_array()
    targets[hit] = short[si_c[hit]]
    target_dates[hit] = cand[hit]

    keep = np.ones(feat_dates.size, dtype=bool) if include_unmatured else hit
    if hit.sum() < 2:
        raise ForecastError(f"only {int(hit.sum())} rows with both features and targets")
    return ForecastDataset(feat_dates[keep], features[keep], targets[keep], target_dates[keep], horizon)


# --------------------------------------------------------------------------
# model


@dataclass
class VarxModel:
    """Fitted masked regression plus the running moments used for refits.

    ``coef`` is (equations x features) with exact zeros where ``mask`` is
    False. ``n``, ``mean_x``, ``mean_y``, ``sxx`` and ``sxy`` are running
    first and second centred moments of every row included so far.
    """

    mask: np.ndarray
    coef: np.ndarray
    intercept: np.ndarray
    last_fit_date: np.datetime64 | None = None
    last_target_date: np.datetime64 | None = None
    window: int | None = None
    n: int = 0
    mean_x: np.ndarray = field(default_factory=lambda: np.zeros(4))
    mean_y: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sxx: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    sxy: np.ndarray = field(default_factory=lambda: np.zeros((4, 3)))

    @classmethod
    def empty(cls, mask=DEFAULT_MASK, window: int | None = None) -> "VarxModel":
        mask = np.asarray(mask, dtype=bool)
        n_eq, n_feat = mask.shape
        return cls(
            mask, np.zeros((n_eq, n_feat)), np.zeros(n_eq), window=window,
            mean_x=np.zeros(n_feat), mean_y=np.zeros(n_eq),
            sxx=np.zeros((n_feat, n_feat)), sxy=np.zeros((n_feat, n_eq)),
        )

    @property
    def fitted(self) -> bool:
        return self.n > 0

    def to_json(self) -> str:
        def enc(d):
            return None if d is None else str(d)

        return json.dumps(
            {
                "features": list(FEATURES),
                "targets": list(TARGETS),
                "mask": self.mask.astype(int).tolist(),
                "coef": self.coef.tolist(),
                "intercept": self.intercept.tolist(),
                "last_fit_date": enc(self.last_fit_date),
                "last_target_date": enc(self.last_target_date),
                "window": self.window,
                "n": self.n,
                "mean_x": self.mean_x.tolist(),
                "mean_y": self.mean_y.tolist(),
                "sxx": self.sxx.tolist(),
                "sxy": self.sxy.tolist(),
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "VarxModel":
        d = json.loads(text)

        def dec(s):
            return None if s is None else np.datetime64(s, "D")

        return cls(
            np.asarray(d["mask"], dtype=bool),
            np.asarray(d["coef"], dtype=float),
            np.asarray(d["intercept"], dtype=float),
            dec(d["last_fit_date"]),
            dec(d["last_target_date"]),
            d["window"],
            int(d["n"]),
            np.asarray(d["mean_x"], dtype=float),
            np.asarray(d["mean_y"], dtype=float),
            np.asarray(d["sxx"], dtype=float),
            np.asarray(d["sxy"], dtype=float),
        )


def _check_design(x: np.ndarray, eq: int) -> None:
    n, k = x.shape
    if n < k + 1:
        raise DegenerateFitError(f"equation {eq}: {n} rows for {k} predictors plus intercept")
    centred = x - x.mean(axis=0)
    norms = np.linalg.norm(centred, axis=0)
    scale = np.linalg.norm(x, axis=0) + np.finfo(float).tiny
    if np.any(norms <= 1e-12 * scale):
        raise DegenerateFitError(f"equation {eq}: constant predictor column")
    s = np.linalg.svd(centred / norms, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        raise DegenerateFitError(f"equation {eq}: collinear predictors")


def _moments(x: np.ndarray, y: np.ndarray):
    mx, my = x.mean(axis=0), y.mean(axis=0)
    cx, cy = x - mx, y - my
    return x.shape[0], mx, my, cx.T @ cx, cx.T @ cy


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    design = np.column_stack([x, np.ones(x.shape[0])])
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    return sol[:-1], float(sol[-1])


def fit(
    dataset: ForecastDataset,
    mask=DEFAULT_MASK,
    *,
    as_of=None,
    window: int | None = None,
) -> VarxModel:
    """Batch OLS fit of every equation on the rows matured by ``as_of``.

    ``as_of=None`` uses every row with a target. ``window`` keeps only the
    most recent matured rows and marks the model as rolling.
    """
    mask = np.asarray(mask, dtype=bool)
    rows = dataset.available if as_of is None else dataset.matured(as_of)
    idx = np.flatnonzero(rows)
    if window is not None:
        idx = idx[-window:]
    if idx.size == 0:
        raise DegenerateFitError("no matured rows to fit")
    x, y = dataset.features[idx], dataset.targets[idx]
    coef = np.zeros(mask.shape)
    intercept = np.zeros(mask.shape[0])
    for eq in range(mask.shape[0]):
        active = mask[eq]
        _check_design(x[:, active], eq)
        beta, b0 = _ols(x[:, active], y[:, eq])
        coef[eq, active] = beta
        intercept[eq] = b0
    n, mx, my, sxx, sxy = _moments(x, y)
    last_target = dataset.target_dates[idx[-1]]
    return VarxModel(
        mask, coef, intercept,
        last_fit_date=np.datetime64(as_of, "D") if as_of is not None else last_target,
        last_target_date=last_target,
        window=window, n=n, mean_x=mx, mean_y=my, sxx=sxx, sxy=sxy,
    )


def _coef_from_moments(model: VarxModel) -> tuple[np.ndarray, np.ndarray]:
    coef = np.zeros(model.mask.shape)
    intercept = np.zeros(model.mask.shape[0])
    for eq in range(model.mask.shape[0]):
        a = model.mask[eq]
        k = int(a.sum())
        sub = model.sxx[a][:, a]
        diag = np.sqrt(np.diag(sub))
        if model.n < k + 1 or np.any(diag <= 1e-12 * (np.abs(model.mean_x[a]) * np.sqrt(model.n) + 1e-300)):
            raise DegenerateFitError(f"equation {eq}: degenerate design after update")
        if k > 1 and np.linalg.det(sub / np.outer(diag, diag)) <= 1e-10:
            raise DegenerateFitError(f"equation {eq}: collinear predictors after update")
        beta = model.sxy[a, eq] / sub[0, 0] if k == 1 else np.linalg.solve(sub, model.sxy[a, eq])
        coef[eq, a] = beta
        intercept[eq] = model.mean_y[eq] - beta @ model.mean_x[a]
    return coef, intercept


def update_online(model: VarxModel, dataset: ForecastDataset, new_date) -> VarxModel:
    """Fold in every target that matured after the model's last update and
    on or before ``new_date``, then refit.

    Expanding models merge the new rows into their running moments one at
    a time, which reproduces a batch OLS refit; rolling models refit on
    their window.
    """
    new_date = np.datetime64(new_date, "D")
    if model.last_fit_date is not None and new_date < model.last_fit_date:
        raise ForecastError(f"update for {new_date} precedes last fit {model.last_fit_date}")
    rows = dataset.matured(new_date)
    if model.last_target_date is not None:
        rows &= dataset.target_dates > model.last_target_date
    idx = np.flatnonzero(rows)
    if idx.size == 0:
        return replace(model, last_fit_date=new_date)
    if model.window is not None:
        return fit(dataset, model.mask, as_of=new_date, window=model.window)

    n, mx, my = model.n, model.mean_x.copy(), model.mean_y.copy()
    sxx, sxy = model.sxx.copy(), model.sxy.copy()
    for i in idx:
        x, y = dataset.features[i], dataset.targets[i]
        n += 1
        dx = x - mx
        dy = y - my
        mx += dx / n
        my += dy / n
        sxx += np.outer(dx, x - mx)
        sxy += np.outer(dx, y - my)
    out = replace(
        model, n=n, mean_x=mx, mean_y=my, sxx=sxx, sxy=sxy,
        last_fit_date=new_date, last_target_date=dataset.target_dates[idx[-1]],
    )
    out.coef, out.intercept = _coef_from_moments(out)
    return out


@dataclass(frozen=True)
class ForecastRecord:
    as_of: np.datetime64 | None
    coefficients: InterpretableCoefficients
    raw: tuple[float, float, float]
    flags: tuple[str, ...] = ()


def predict(model: VarxModel, features, as_of=None) -> ForecastRecord:
    """Evaluate every equation; sigma_mvp and u are floored at small
    positives so the forecast frontier stays well defined."""
    if not model.fitted:
        raise NotFittedError("model has not been fitted")
    x = np.asarray(features, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ForecastError("non-finite features")
    raw = model.coef @ x + model.intercept
    r_mvp, sigma, u = (float(v) for v in raw)
    flags = []
    if sigma < SIGMA_FLOOR:
        sigma = SIGMA_FLOOR
        flags.append("sigma_floor")
    if u < U_FLOOR:
        u = U_FLOOR
        flags.append("u_floor")
    return ForecastRecord(
        None if as_of is None else np.datetime64(as_of, "D"),
        InterpretableCoefficients(r_mvp, sigma, u),
        (float(raw[0]), float(raw[1]), float(raw[2])),
        tuple(flags),
    )


def oos_r2(predictions, actuals, training_means) -> np.ndarray:
    """Out-of-sample R^2 per column, against the training mean known at
    forecast time: ``1 - SSE / sum((y - mean_train)^2)``."""
    p = np.asarray(predictions, dtype=float)
    a = np.asarray(actuals, dtype=float)
    m = np.asarray(training_means, dtype=float)
    if not (p.shape == a.shape == m.shape):
        raise ValueError("predictions, actuals and training means differ in shape")
    if p.shape[0] < 2:
        raise ValueError("need at least two out-of-sample points")
    one_d = p.ndim == 1
    if one_d:
        p, a, m = p[:, None], a[:, None], m[:, None]
    sse = ((a - p) ** 2).sum(axis=0)
    sst = ((a - m) ** 2).sum(axis=0)
    if np.any(sst == 0):
        raise ForecastError("zero out-of-sample variance; R^2 undefined")
    r2 = 1.0 - sse / sst
    return r2[0] if one_d else r2


def expanding_target_means(dataset: ForecastDataset, as_of_dates) -> np.ndarray:
    """Mean of the targets matured on or before each date (NaN if none)."""
    avail = np.flatnonzero(dataset.available)
    order = avail[np.argsort(dataset.target_dates[avail], kind="stable")]
    tdates = dataset.target_dates[order]
    csum = np.vstack([np.zeros((1, dataset.targets.shape[1])), np.cumsum(dataset.targets[order], axis=0)])
    counts = np.searchsorted(tdates, np.asarray(as_of_dates, dtype="datetime64[D]"), side="right")
    with np.errstate(invalid="ignore", divide="ignore"):
        return csum[counts] / counts[:, None]


# --------------------------------------------------------------------------
# online forecast loop


@dataclass
class ForecastLog:
    dates: np.ndarray
    predicted: np.ndarray
    raw: np.ndarray
    actual: np.ndarray
    train_mean: np.ndarray
    flags: list

    def r2(self) -> np.ndarray:
        ok = ~np.isnan(self.actual).any(axis=1) & ~np.isnan(self.train_mean).any(axis=1)
        return oos_r2(self.predicted[ok], self.actual[ok], self.train_mean[ok])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "pred_r_mvp", "pred_sigma_mvp", "pred_u", "flags"])
            for d, p, f in zip(self.dates, self.predicted, self.flags):
                w.writerow([str(d), *(repr(float(v)) for v in p), ";".join(f)])


def run_online(
    dataset: ForecastDataset,
    in_sample_end,
    mask=DEFAULT_MASK,
    *,
    window: int | None = None,
) -> tuple[ForecastLog, VarxModel]:
    """Fit on targets matured by ``in_sample_end`` then issue one forecast
    per later feature date, updating the model with newly matured targets
    before each forecast."""
    in_sample_end = np.datetime64(in_sample_end, "D")
    model = fit(dataset, mask, as_of=in_sample_end, window=window)
    idx = np.flatnonzero(dataset.dates > in_sample_end)
    if idx.size == 0:
        raise ForecastError("no out-of-sample dates after the in-sample end")
    preds, raws, flags = [], [], []
    for i in idx:
        model = update_online(model, dataset, dataset.dates[i])
        rec = predict(model, dataset.features[i], dataset.dates[i])
        c = rec.coefficients
        preds.append((c.r_mvp, c.sigma_mvp, c.u))
        raws.append(rec.raw)
        flags.append(rec.flags)
    dates = dataset.dates[idx]
    log = ForecastLog(
        dates,
        np.asarray(preds),
        np.asarray(raws),
        dataset.targets[idx],
        expanding_target_means(dataset, dates),
        flags,
    )
    return log, model
