"""Prediction aggregation and bootstrap bagging.

Geometric aggregation is computed in ln(1+p) space rather than raw
ln(p), so zero predictions are admissible and the rule is the exact
dual of the evaluation metric's space. For targets with a scaling
distribution this is the aggregation that matches the loss; arithmetic
averaging is kept for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import FeatureTable

_BAG_STREAM = 47

AGGREGATION_KINDS = ("arithmetic", "median", "geometric")


@dataclass(frozen=True)
class AggregationRule:
    kind: str
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in AGGREGATION_KINDS:
            raise ValueError(f"unknown aggregation kind {self.kind!r}")
        if self.weights is not None:
            if self.kind == "median":
                raise ValueError("median aggregation does not take weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0):
                raise ValueError("weights must be non-negative")
            if abs(float(w.sum()) - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")


ARITHMETIC = AggregationRule("arithmetic")
MEDIAN = AggregationRule("median")
GEOMETRIC = AggregationRule("geometric")


@dataclass(frozen=True)
class EnsembleSpec:
    """Member model references plus the rule used to combine them."""

    members: tuple[str, ...]
    rule: AggregationRule

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if self.rule.weights is not None and len(self.rule.weights) != len(self.members):
            raise ValueError("weight count does not match member count")


def aggregate(predictions, rule: AggregationRule) -> float:
    """Combine one editor's member predictions under the rule."""
    p = np.asarray(predictions, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("predictions must be a nonempty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("member predictions must be finite and non-negative")
    return float(aggregate_matrix(p[:, None], rule)[0])


def aggregate_matrix(P: np.ndarray, rule: AggregationRule) -> np.ndarray:
    """Combine a (members, editors) prediction matrix column-wise."""
    if rule.weights is not None:
        if len(rule.weights) != P.shape[0]:
            raise ValueError("weight count does not match member count")
        w = np.asarray(rule.weights, dtype=np.float64)[:, None]
        if rule.kind == "arithmetic":
            return np.sum(w * P, axis=0)
        return np.expm1(np.sum(w * np.log1p(P), axis=0))
    if rule.kind == "arithmetic":
        return np.mean(P, axis=0)
    if rule.kind == "median":
        return np.median(P, axis=0)
    return np.expm1(np.mean(np.log1p(P), axis=0))


class BagFitError(RuntimeError):
    """A bagging replicate's fit failed; carries the replicate index."""

    def __init__(self, replicate: int, message: str):
        super().__init__(f"replicate {replicate}: {message}")
        self.replicate = replicate


@dataclass(frozen=True)
class BaggedModel:
    """Models fitted on bootstrap resamples, combined per rule."""

    members: tuple[object, ...]
    rule: AggregationRule
    predict_member: Callable[[object, FeatureTable], np.ndarray]

    def predict_table(self, table: FeatureTable) -> np.ndarray:
        P = np.stack(
            [np.maximum(self.predict_member(m, table), 0.0) for m in self.members]
        )
        return aggregate_matrix(P, self.rule)


def bootstrap_bag(
    dataset: FeatureTable,
    fit_procedure: Callable[[FeatureTable], object],
    predict_procedure: Callable[[object, FeatureTable], np.ndarray],
    k: int = 25,
    rule: AggregationRule = MEDIAN,
    seed: int = 0,
) -> BaggedModel:
    """Fit k models on with-replacement resamples and bag their predictions.

    Resample indices derive from (seed, replicate index), so the members
    are reproducible independent of evaluation order.
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    if k < 1:
        raise ValueError("k must be >= 1")
    if rule.kind not in ("median", "geometric"):
        raise ValueError("bagging aggregates by median or geometric mean")
    members = []
    for rep in range(k):
        rng = np.random.default_rng([abs(int(seed)), _BAG_STREAM, rep])
        rows = rng.integers(0, dataset.n, size=dataset.n)
        try:
            members.append(fit_procedure(dataset.take(rows)))
        except Exception as exc:
            raise BagFitError(rep, str(exc)) from exc
    return BaggedModel(tuple(members), rule, predict_procedure)
