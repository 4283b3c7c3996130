"""Scoring: RMSLE, its optimal constant predictor, and Pareto tail fits.

All loss arithmetic happens in ln(1 + x) space; large counts never meet
a raw ratio, so there is no catastrophic cancellation to worry about.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_TAIL_SAMPLES = 10


class InsufficientDataError(ValueError):
    """Too few tail samples to estimate a tail exponent."""


@dataclass(frozen=True, slots=True)
class EvalResult:
    """An RMSLE score together with the number of editors scored."""

    epsilon: float
    n: int


@dataclass(frozen=True, slots=True)
class ParetoFit:
    """Estimated tail exponent of Pr(X > x) = (x / x_min)^(-lambda)."""

    lambda_hat: float
    x_min: float
    n_tail: int


def rmsle(predictions, actuals) -> EvalResult:
    """Root mean squared logarithmic error between predictions and counts."""
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.ndim != 1 or a.ndim != 1:
        raise ValueError("predictions and actuals must be one-dimensional")
    if p.size != a.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {a.size} actuals")
    if p.size == 0:
        raise ValueError("cannot score an empty prediction set")
    if not np.all(np.isfinite(p)) or not np.all(np.isfinite(a)):
        raise ValueError("non-finite inputs")
    if np.any(p < 0) or np.any(a < 0):
        raise ValueError("negative inputs")
    diff = np.log1p(p) - np.log1p(a)
    return EvalResult(float(np.sqrt(np.mean(diff * diff))), int(p.size))


def log_errors(predictions: np.ndarray, actuals: np.ndarray) -> np.ndarray:
    """Per-editor ln(1+p) - ln(1+a) residuals (no validation; hot path)."""
    return np.log1p(predictions) - np.log1p(actuals)


def optimal_constant(actuals) -> float:
    """The constant predictor minimizing RMSLE against the given counts.

    Equals the geometric mean of (a_i + 1), minus 1.
    """
    a = np.asarray(actuals, dtype=np.float64)
    if a.size == 0:
        raise ValueError("cannot summarize an empty target set")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("targets must be finite and non-negative")
    return float(np.expm1(np.mean(np.log1p(a))))


def fit_pareto_tail(counts, x_min: float) -> ParetoFit:
    """Hill maximum-likelihood tail exponent over samples above x_min."""
    tail = _tail_samples(counts, x_min)
    lam = tail.size / float(np.sum(np.log(tail / x_min)))
    return ParetoFit(lam, float(x_min), int(tail.size))


def fit_pareto_ccdf(counts, x_min: float) -> ParetoFit:
    """Tail exponent from a least-squares line on the log-log CCDF.

    Secondary estimator kept for plotting parity; the Hill estimator is
    the one with known variance.
    """
    tail = _tail_samples(counts, x_min)
    values, survival = ccdf(tail)
    slope, _ = np.polyfit(np.log(values), np.log(survival), 1)
    return ParetoFit(float(-slope), float(x_min), int(tail.size))


def ccdf(samples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical survival function Pr(X >= x) at each distinct sample value."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise ValueError("empty sample")
    values, first_index = np.unique(x, return_index=True)
    survival = (x.size - first_index) / x.size
    return values, survival


def _tail_samples(counts, x_min: float) -> np.ndarray:
    if x_min <= 0:
        raise ValueError("x_min must be positive")
    c = np.asarray(counts, dtype=np.float64)
    tail = c[c > x_min]
    if tail.size < MIN_TAIL_SAMPLES:
        raise InsufficientDataError(
            f"need at least {MIN_TAIL_SAMPLES} samples above x_min={x_min}, "
            f"got {tail.size}"
        )
    return tail
