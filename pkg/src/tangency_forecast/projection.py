"""Nearest point on the efficient branch of a frontier to a target (sigma, r).

The objective is the squared Euclidean distance in (volatility, return)
space, optionally with the volatility axis rescaled by ``sigma_weight``:

    D(r) = (r_target - r)^2 + w^2 (sigma_target - sigma(r))^2,   r >= r_mvp

It is minimised by Newton's method on D'(r), with a scan-bracketed
golden-section search as a fallback and as a global check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frontier import (
    FrontierError,
    FrontierPoint,
    InterpretableCoefficients,
    MomentEstimate,
    _check_ic,
    efficient_weights,
    frontier_sigma,
)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ProjectionError(FrontierError):
    pass


@dataclass(frozen=True)
class ProjectionResult:
    point: FrontierPoint
    distance: float
    iterations: int
    method: str
    clamped: bool = False


def squared_distance(ic: InterpretableCoefficients, target: FrontierPoint, r, sigma_weight: float = 1.0):
    sig = frontier_sigma(ic, r)
    return (target.ret - np.asarray(r)) ** 2 + (sigma_weight * (target.sigma - sig)) ** 2


def distance_derivative(ic: InterpretableCoefficients, target: FrontierPoint, r, sigma_weight: float = 1.0):
    """Analytic d/dr of :func:`squared_distance`.

    With ``sigma'(r) = (r - r_mvp) / (u^2 sigma(r))``. The denominator
    never vanishes since ``sigma(r) >= sigma_mvp > 0``.
    """
    r = np.asarray(r, dtype=float)
    sig = frontier_sigma(ic, r)
    dsig = (r - ic.r_mvp) / (ic.u**2 * sig)
    out = -2.0 * (target.ret - r) + 2.0 * sigma_weight**2 * (sig - target.sigma) * dsig
    return float(out) if out.ndim == 0 else out


def _second_derivative(ic, target, r, sigma_weight):
    sig = frontier_sigma(ic, r)
    dsig = (r - ic.r_mvp) / (ic.u**2 * sig)
    d2sig = (1.0 / ic.u**2 - dsig**2) / sig
    w2 = sigma_weight**2
    return 2.0 + 2.0 * w2 * dsig**2 + 2.0 * w2 * (sig - target.sigma) * d2sig


def search_bracket(ic: InterpretableCoefficients, target: FrontierPoint) -> tuple[float, float]:
    lo = ic.r_mvp
    # beyond max(r_target, sigma^-1(sigma_target)) both terms of D increase
    hi = lo + 50.0 * ic.u * ic.sigma_mvp + abs(target.ret - lo) + ic.u * abs(target.sigma)
    return lo, hi


def _scalar_fns(ic, target, sigma_weight):
    m, s2, inv_u2, tr, ts, w2 = ic.r_mvp, ic.sigma_mvp**2, 1.0 / ic.u**2, target.ret, target.sigma, sigma_weight**2
    sqrt = math.sqrt

    def fun(r):
        d = r - m
        return (tr - r) ** 2 + w2 * (ts - sqrt(d * d * inv_u2 + s2)) ** 2

    def grad(r):
        d = r - m
        sig = sqrt(d * d * inv_u2 + s2)
        return -2.0 * (tr - r) + 2.0 * w2 * (sig - ts) * d * inv_u2 / sig

    return fun, grad


def _newton(ic, target, sigma_weight, max_iter):
    lo = ic.r_mvp
    fun, grad = _scalar_fns(ic, target, sigma_weight)
    r = max(target.ret, lo)
    f = fun(r)
    for it in range(1, max_iter + 1):
        g = grad(r)
        if abs(g) < 1e-14:
            return r, it - 1
        h = _second_derivative(ic, target, r, sigma_weight)
        if not h > 0:
            return None, it
        r_new = r - g / h
        if r_new < lo:
            return None, it
        if abs(r_new - r) < 1e-12 * max(1.0, abs(r_new)):
            return r_new, it
        f_new = fun(r_new)
        if f_new > f + 4 * np.finfo(float).eps * max(f, 1e-300):
            return None, it
        r, f = r_new, f_new
    return None, max_iter


def _golden(fun, a, b, tol, max_iter=500):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    it = 0
    while b - a > tol and it < max_iter:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    return (a + b) / 2.0, it


def solve_min_distance(
    ic: InterpretableCoefficients,
    forecast_tp: FrontierPoint,
    *,
    sigma_weight: float = 1.0,
    max_iter: int = 100,
    scan_points: int = 512,
) -> ProjectionResult:
    """Project ``forecast_tp`` onto the efficient branch of the frontier ``ic``.

    Newton starts from ``max(forecast_tp.ret, r_mvp)``. If it stalls, leaves
    the branch, increases the objective, or lands on a point beaten by a
    coarse scan of the bracket, the answer comes from a golden-section
    search around the best scanned point instead.
    """
    _check_ic(ic)
    if not (math.isfinite(forecast_tp.ret) and math.isfinite(forecast_tp.sigma)):
        raise ProjectionError(f"non-finite target {forecast_tp}")
    clamped = forecast_tp.ret < ic.r_mvp
    lo, hi = search_bracket(ic, forecast_tp)

    fun, grad = _scalar_fns(ic, forecast_tp, sigma_weight)
    r_star, iters = _newton(ic, forecast_tp, sigma_weight, max_iter)
    method = "newton"
    grid = np.linspace(lo, hi, scan_points)
    vals = squared_distance(ic, forecast_tp, grid, sigma_weight)
    if not np.all(np.isfinite(vals)):
        raise ProjectionError("objective is not finite over the search bracket")
    j = int(np.argmin(vals))
    if r_star is not None and fun(r_star) > vals[j] + 1e-15:
        r_star = None

    if r_star is None:
        method = "fallback"
        a, b = grid[max(j - 1, 0)], grid[min(j + 1, scan_points - 1)]
        r_star, g_iters = _golden(fun, a, b, tol=1e-14 * max(1.0, abs(b)))
        iters += g_iters
        # polish: safeguarded Newton steps kept inside [a, b]
        for _ in range(5):
            h = _second_derivative(ic, forecast_tp, r_star, sigma_weight)
            if not h > 0:
                break
            cand = r_star - grad(r_star) / h
            if not (a <= cand <= b) or fun(cand) > fun(r_star):
                break
            r_star = cand
            iters += 1
        if fun(lo) <= fun(r_star):
            r_star = lo
        if not math.isfinite(r_star):
            raise ProjectionError("golden-section fallback failed")

    sigma = frontier_sigma(ic, r_star)
    return ProjectionResult(
        FrontierPoint(sigma, r_star),
        math.sqrt(fun(r_star)),
        iters,
        method,
        clamped,
    )


def min_distance_weights(m: MomentEstimate, proj: ProjectionResult) -> np.ndarray:
    return efficient_weights(m, proj.point.ret)
