"""Efficient-frontier geometry in closed form.

Everything here works in daily units: ``mean`` is a vector of expected
daily log returns, ``cov`` the daily covariance matrix and ``rf`` a daily
risk-free rate. Shorting is allowed, so frontier weights are unbounded.

The frontier is described two ways. The Merton scalars ``A = e'V^-1 e``,
``B = r'V^-1 e`` and ``C = r'V^-1 r`` give

    sigma^2(r) = (A r^2 - 2 B r + C) / (A C - B^2)

and the interpretable triple ``(r_mvp, sigma_mvp, u)`` gives the same
curve as

    sigma^2(r) = ((r - r_mvp) / u)^2 + sigma_mvp^2

with ``r_mvp = B/A``, ``sigma_mvp = 1/sqrt(A)``, ``u = sqrt((AC - B^2)/A)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ReturnPanel

logger = logging.getLogger(__name__)

#: smallest eigenvalue below this fraction of ``trace(V)/n`` triggers a ridge
EIG_RTOL = 1e-12
#: ridge added, as a fraction of ``trace(V)/n``
RIDGE_RTOL = 1e-10
#: ``AC - B^2 <= DEGENERACY_RTOL * max(1, AC)`` is a degenerate frontier
DEGENERACY_RTOL = 1e-14
#: relative gap between ``r_mvp`` and ``rf`` below which no tangency exists
TANGENCY_RTOL = 1e-12


class FrontierError(ValueError):
    """Base class for frontier computations that have no valid answer."""


class InsufficientHistoryError(FrontierError):
    pass


class SingularCovarianceError(FrontierError):
    pass


class DegenerateFrontierError(FrontierError):
    pass


class NoTangencyError(FrontierError):
    pass


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    window_len: int | None = None
    as_of: np.datetime64 | None = None
    ridge: float = 0.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} incompatible with {mean.size} assets")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n_assets(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MertonCoefficients:
    A: float
    B: float
    C: float

    @property
    def discriminant(self) -> float:
        return self.A * self.C - self.B**2


@dataclass(frozen=True)
class InterpretableCoefficients:
    r_mvp: float
    sigma_mvp: float
    u: float


@dataclass(frozen=True)
class FrontierPoint:
    sigma: float
    ret: float


# --------------------------------------------------------------------------
# moments


def condition_covariance(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetrise ``cov`` and add a small ridge if it is near-singular.

    Returns the conditioned matrix and the ridge that was added (0.0 when
    none was needed). Raises :class:`SingularCovarianceError` if the matrix
    is still singular after one ridge attempt.
    """
    covs, ridge, ok = _condition_batch(np.asarray(cov, dtype=float)[None])
    if not ok[0]:
        raise SingularCovarianceError("covariance matrix is singular even after ridge conditioning")
    return covs[0], float(ridge[0])


def _condition_batch(covs: np.ndarray):
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    n = covs.shape[-1]
    scale = np.trace(covs, axis1=-2, axis2=-1) / n
    eig_min = np.linalg.eigvalsh(covs)[:, 0]
    need = eig_min < EIG_RTOL * scale
    ridge = np.where(need, RIDGE_RTOL * scale, 0.0)
    if np.any(need):
        covs = covs + ridge[:, None, None] * np.eye(n)
        eig_min = np.where(need, np.linalg.eigvalsh(covs)[:, 0], eig_min)
    ok = (scale > 0) & np.isfinite(scale) & (eig_min >= EIG_RTOL * scale)
    return covs, ridge, ok


def _window_stats(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # windows: (k, L, n)
    length = windows.shape[1]
    mean = windows.mean(axis=1)
    centred = windows - mean[:, None, :]
    cov = np.einsum("kli,klj->kij", centred, centred) / (length - 1)
    return mean, cov


def estimate_moments(panel: ReturnPanel, as_of, window_len: int) -> MomentEstimate:
    """Sample mean and covariance (denominator ``L - 1``) of the ``window_len``
    return rows ending at ``as_of`` (or the last date before it)."""
    if window_len < 2:
        raise ValueError("window_len must be at least 2")
    end = int(np.searchsorted(panel.dates, np.datetime64(as_of, "D"), side="right"))
    if end < window_len:
        raise InsufficientHistoryError(
            f"{window_len} rows needed up to {as_of}, only {end} available"
        )
    window = panel.returns[end - window_len : end]
    mean, cov = _window_stats(window[None])
    cov, ridge, ok = _condition_batch(cov)
    if not ok[0]:
        raise SingularCovarianceError(f"covariance singular at {as_of} even after ridge")
    return MomentEstimate(mean[0], cov[0], window_len, panel.dates[end - 1], float(ridge[0]))


@dataclass(frozen=True)
class RollingMoments:
    """Moments of every trailing window of a return panel, dated at the
    window's last row. ``ok`` is False where conditioning failed."""

    dates: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    ridge: np.ndarray
    ok: np.ndarray
    window_len: int

    def __len__(self) -> int:
        return self.dates.size

    def estimate(self, i: int) -> MomentEstimate:
        if not self.ok[i]:
            raise SingularCovarianceError(f"covariance singular at {self.dates[i]}")
        return MomentEstimate(self.mean[i], self.cov[i], self.window_len, self.dates[i], float(self.ridge[i]))


def rolling_moments(panel: ReturnPanel, window_len: int, chunk: int = 2048) -> RollingMoments:
    if window_len < 2:
        raise ValueError("window_len must be at least 2")
    if len(panel) < window_len:
        raise InsufficientHistoryError(f"panel has {len(panel)} rows, window needs {window_len}")
    views = np.lib.stride_tricks.sliding_window_view(panel.returns, window_len, axis=0)
    views = np.swapaxes(views, 1, 2)  # (k, L, n)
    k, n = views.shape[0], panel.n_assets
    means = np.empty((k, n))
    covs = np.empty((k, n, n))
    ridge = np.empty(k)
    ok = np.empty(k, dtype=bool)
    for lo in range(0, k, chunk):
        hi = min(lo + chunk, k)
        m, c = _window_stats(views[lo:hi])
        c, rdg, good = _condition_batch(c)
        means[lo:hi], covs[lo:hi], ridge[lo:hi], ok[lo:hi] = m, c, rdg, good
    return RollingMoments(panel.dates[window_len - 1 :], means, covs, ridge, ok, window_len)


# --------------------------------------------------------------------------
# coefficients


def _solve_pair(cov: np.ndarray, mean: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``V^-1 e`` and ``V^-1 r``."""
    rhs = np.column_stack([np.ones_like(mean), mean])
    try:
        sol = np.linalg.solve(cov, rhs)
    except np.linalg.LinAlgError:
        raise SingularCovarianceError("covariance matrix is singular") from None
    return sol[:, 0], sol[:, 1]


def merton_coefficients(m: MomentEstimate) -> MertonCoefficients:
    vinv_e, vinv_r = _solve_pair(m.cov, m.mean)
    A = float(vinv_e.sum())
    B = float(m.mean @ vinv_e)
    C = float(m.mean @ vinv_r)
    if not A > 0:
        raise DegenerateFrontierError(f"A = {A} is not positive")
    if not C > 0:
        raise DegenerateFrontierError(f"C = {C} is not positive")
    return MertonCoefficients(A, B, C)


def _is_degenerate(A, B, C):
    return A * C - B**2 <= DEGENERACY_RTOL * np.maximum(1.0, A * C)


def interpretable_from_merton(mc: MertonCoefficients) -> InterpretableCoefficients:
    A, B, C = mc.A, mc.B, mc.C
    if not A > 0:
        raise DegenerateFrontierError(f"A = {A} is not positive")
    if _is_degenerate(A, B, C):
        raise DegenerateFrontierError(f"AC - B^2 = {A * C - B**2:.3e} is not positive")
    return InterpretableCoefficients(B / A, 1.0 / math.sqrt(A), math.sqrt((A * C - B**2) / A))


def merton_from_interpretable(ic: InterpretableCoefficients) -> MertonCoefficients:
    if not ic.sigma_mvp > 0:
        raise DegenerateFrontierError(f"sigma_mvp must be positive, got {ic.sigma_mvp}")
    var = ic.sigma_mvp**2
    return MertonCoefficients(1.0 / var, ic.r_mvp / var, ic.u**2 + ic.r_mvp**2 / var)


def coefficients(m: MomentEstimate) -> InterpretableCoefficients:
    return interpretable_from_merton(merton_coefficients(m))


def _check_ic(ic: InterpretableCoefficients) -> None:
    if not (ic.sigma_mvp > 0 and ic.u > 0):
        raise DegenerateFrontierError(f"invalid frontier coefficients {ic}")


def frontier_sigma(ic: InterpretableCoefficients, ret):
    """Volatility of the frontier portfolio with return ``ret`` (vectorised)."""
    _check_ic(ic)
    z = (np.asarray(ret, dtype=float) - ic.r_mvp) / ic.u
    out = np.sqrt(z * z + ic.sigma_mvp**2)
    return float(out) if out.ndim == 0 else out


def frontier_sigma_merton(mc: MertonCoefficients, ret):
    """The same curve written with the Merton scalars."""
    r = np.asarray(ret, dtype=float)
    return np.sqrt((mc.A * r * r - 2 * mc.B * r + mc.C) / mc.discriminant)


def u_decomposition(m: MomentEstimate) -> tuple[float, float]:
    """Split ``u`` into a Mahalanobis length and a cosine similarity.

    The cosine is taken under the ``V^-1`` inner product,
    ``B / sqrt(A C)``, which is what makes
    ``u = sqrt(C) * sqrt(1 - cos^2)`` hold exactly.
    """
    vinv_e, vinv_r = _solve_pair(m.cov, m.mean)
    A = float(vinv_e.sum())
    B = float(m.mean @ vinv_e)
    C = float(m.mean @ vinv_r)
    if not C > 0:
        raise DegenerateFrontierError(f"C = {C} is not positive")
    cos = B / math.sqrt(A * C)
    return math.sqrt(C), float(np.clip(cos, -1.0, 1.0))


def euclidean_cosine(mean: np.ndarray) -> float:
    """Plain cosine similarity between ``mean`` and the ones vector."""
    mean = np.asarray(mean, dtype=float)
    return float(mean.sum() / (np.linalg.norm(mean) * math.sqrt(mean.size)))


# --------------------------------------------------------------------------
# portfolios


def efficient_weights(m: MomentEstimate, r_target: float) -> np.ndarray:
    """Minimum-variance fully-invested weights with expected return ``r_target``."""
    vinv_e, vinv_r = _solve_pair(m.cov, m.mean)
    A = vinv_e.sum()
    B = m.mean @ vinv_e
    C = m.mean @ vinv_r
    if not A > 0 or _is_degenerate(A, B, C):
        raise DegenerateFrontierError("frontier is degenerate; efficient weights undefined")
    D = A * C - B**2
    lam = (A * r_target - B) / D
    gam = (C - B * r_target) / D
    return lam * vinv_r + gam * vinv_e


def min_variance_weights(m: MomentEstimate) -> np.ndarray:
    vinv_e, _ = _solve_pair(m.cov, m.mean)
    return vinv_e / vinv_e.sum()


def portfolio_point(m: MomentEstimate, w: np.ndarray) -> FrontierPoint:
    w = np.asarray(w, dtype=float)
    return FrontierPoint(float(math.sqrt(max(w @ m.cov @ w, 0.0))), float(w @ m.mean))


def tangency_from_coefficients(ic: InterpretableCoefficients, rf: float) -> FrontierPoint:
    """Tangency point of the capital market line from ``rf``, using only the
    frontier coefficients."""
    _check_ic(ic)
    gap = ic.r_mvp - rf
    scale = max(abs(ic.r_mvp), abs(rf), ic.u * ic.sigma_mvp)
    if not gap > TANGENCY_RTOL * scale:
        raise NoTangencyError(
            f"rf = {rf:.6g} is not below r_mvp = {ic.r_mvp:.6g}; no tangency on the efficient branch"
        )
    r_tp = (ic.r_mvp**2 + ic.u**2 * ic.sigma_mvp**2 - ic.r_mvp * rf) / gap
    return FrontierPoint(frontier_sigma(ic, r_tp), r_tp)


def tangency_numeric(m: MomentEstimate, rf: float) -> tuple[FrontierPoint, np.ndarray]:
    """Sharpe-maximising weights ``V^-1 (r - rf e)`` normalised to sum to one."""
    vinv_e, vinv_r = _solve_pair(m.cov, m.mean)
    A = vinv_e.sum()
    B = m.mean @ vinv_e
    denom = B - A * rf
    if not denom > TANGENCY_RTOL * max(abs(B), abs(A * rf)):
        raise NoTangencyError(f"B - A*rf = {denom:.3e}; no tangency on the efficient branch")
    w = (vinv_r - rf * vinv_e) / denom
    return portfolio_point(m, w), w


def sharpe(point: FrontierPoint, rf: float) -> float:
    return (point.ret - rf) / point.sigma


def frontier_curve(ic: InterpretableCoefficients, n_points: int = 201, span: float | None = None):
    """Grid of ``(sigma, ret)`` points along both branches of the frontier.

    ``span`` is the distance in return from the vertex each way; it
    defaults to four times ``u * sigma_mvp``.
    """
    if span is None:
        span = 4.0 * ic.u * ic.sigma_mvp
    ret = np.linspace(ic.r_mvp - span, ic.r_mvp + span, n_points)
    return frontier_sigma(ic, ret), ret


# --------------------------------------------------------------------------
# rolling coefficient series


@dataclass
class CoefficientSeries:
    dates: np.ndarray
    r_mvp: np.ndarray
    sigma_mvp: np.ndarray
    u: np.ndarray
    window_len: int
    excluded: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.dates.size

    def record(self, i: int) -> InterpretableCoefficients:
        return InterpretableCoefficients(float(self.r_mvp[i]), float(self.sigma_mvp[i]), float(self.u[i]))

    def as_array(self) -> np.ndarray:
        return np.column_stack([self.r_mvp, self.sigma_mvp, self.u])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "r_mvp", "sigma_mvp", "u", "window_len"])
            for d, a, b, c in zip(self.dates, self.r_mvp, self.sigma_mvp, self.u):
                w.writerow([str(d), repr(float(a)), repr(float(b)), repr(float(c)), self.window_len])

    @classmethod
    def from_csv(cls, path) -> "CoefficientSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no coefficient rows")
        lens = {int(r["window_len"]) for r in rows}
        if len(lens) != 1:
            raise ValueError(f"{path}: mixed window lengths {sorted(lens)}")
        return cls(
            np.array([r["date"] for r in rows], dtype="datetime64[D]"),
            np.array([float(r["r_mvp"]) for r in rows]),
            np.array([float(r["sigma_mvp"]) for r in rows]),
            np.array([float(r["u"]) for r in rows]),
            lens.pop(),
        )


def coefficients_from_moments(rm: RollingMoments) -> CoefficientSeries:
    """Interpretable coefficients for every window; degenerate windows are
    dropped and their reason recorded in ``excluded``."""
    k = len(rm)
    A = np.full(k, np.nan)
    B = np.full(k, np.nan)
    C = np.full(k, np.nan)
    good = rm.ok.copy()
    if good.any():
        mean = rm.mean[good]
        rhs = np.stack([np.ones_like(mean), mean], axis=-1)
        sol = np.linalg.solve(rm.cov[good], rhs)
        A[good] = sol[:, :, 0].sum(axis=1)
        B[good] = np.einsum("ki,ki->k", mean, sol[:, :, 0])
        C[good] = np.einsum("ki,ki->k", mean, sol[:, :, 1])

    excluded = {}
    with np.errstate(invalid="ignore"):
        bad_ac = good & ~((A > 0) & (C > 0))
        degenerate = good & ~bad_ac & _is_degenerate(A, B, C)
    for i in np.flatnonzero(~rm.ok):
        excluded[rm.dates[i]] = "singular covariance"
    for i in np.flatnonzero(bad_ac):
        excluded[rm.dates[i]] = "non-positive A or C"
    for i in np.flatnonzero(degenerate):
        excluded[rm.dates[i]] = "degenerate frontier (AC - B^2 <= 0)"
    keep = good & ~bad_ac & ~degenerate
    if excluded:
        logger.info("window %d: excluded %d of %d dates", rm.window_len, len(excluded), k)
    if not keep.any():
        raise DegenerateFrontierError("no date has a non-degenerate frontier")
    A, B, C = A[keep], B[keep], C[keep]
    return CoefficientSeries(
        rm.dates[keep],
        B / A,
        1.0 / np.sqrt(A),
        np.sqrt((A * C - B**2) / A),
        rm.window_len,
        excluded,
    )


def rolling_coefficients(panel: ReturnPanel, window_len: int) -> CoefficientSeries:
    return coefficients_from_moments(rolling_moments(panel, window_len))
