"""Forecast efficient-frontier coefficients, derive a forecasted tangency
portfolio, and invest in the nearest portfolio on today's frontier."""

from .frontier import (
    CoefficientSeries,
    FrontierPoint,
    InterpretableCoefficients,
    MertonCoefficients,
    MomentEstimate,
    coefficients,
    efficient_weights,
    estimate_moments,
    frontier_sigma,
    interpretable_from_merton,
    merton_coefficients,
    merton_from_interpretable,
    rolling_coefficients,
    tangency_from_coefficients,
    tangency_numeric,
    u_decomposition,
)
from .projection import ProjectionResult, min_distance_weights, solve_min_distance

__version__ = "0.1.0"
