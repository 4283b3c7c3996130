"""Predictor extraction from editor histories at a cutoff.

Feature names form a tiny expression language:

* base names (see BASE_FEATURES) plus window counts ``e_w{a}_{b}`` /
  ``d_w{a}_{b}`` for edits / unique edit days in backward month window
  (a, b);
* ``log1p(<name>)`` for ln(1 + value);
* ``<f>*<g>`` for pairwise products of base names.

The frozen catalogs returned by standard_catalogs() are the single
source of truth for which predictors each model in the lineup consumes;
their exact membership is documented in the README.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .editlog import (
    SECONDS_PER_DAY,
    CutoffConfig,
    EditorHistory,
    target_edits,
)

_WINDOW_RE = re.compile(r"^([ed])_w(\d+)_(\d+)$")
_LOG_RE = re.compile(r"^log1p\((.+)\)$")

# Aliases for the windows every model talks about: the persistence
# period (months 0-5), the last month, and the five months before the
# persistence period (months 5-10).
_WINDOW_ALIASES = {
    "e_p": ("e", 0, 5),
    "e_1": ("e", 0, 1),
    "e_prev": ("e", 5, 10),
    "d_p": ("d", 0, 5),
    "d_prev": ("d", 5, 10),
}

BASE_FEATURES = (
    "e_p",
    "e_1",
    "e_prev",
    "d_p",
    "d_prev",
    "days_since_last_edit",
    "age_days",
    "reverts_gotten_p",
    "reverts_made_p",
    "e_ns0_p",
    "articles_p",
    "comment_frac_p",
)


def _parse_name(name: str) -> tuple[str, tuple]:
    """Classify a feature name; raises ValueError if unresolvable."""
    if name in BASE_FEATURES:
        return "base", (name,)
    m = _WINDOW_RE.match(name)
    if m:
        kind, a, b = m.group(1), int(m.group(2)), int(m.group(3))
        if a >= b:
            raise ValueError(f"bad window in feature name {name!r}")
        return "window", (kind, a, b)
    m = _LOG_RE.match(name)
    if m:
        inner = m.group(1)
        inner_kind, _ = _parse_name(inner)
        if inner_kind == "log":
            raise ValueError(f"nested log transform in {name!r}")
        return "log", (inner,)
    if "*" in name:
        left, sep, right = name.partition("*")
        if not left or not right or "*" in right:
            raise ValueError(f"bad product feature name {name!r}")
        for factor in (left, right):
            kind, _ = _parse_name(factor)
            if kind not in ("base", "window"):
                raise ValueError(f"product factor {factor!r} must be a base feature")
        return "product", (left, right)
    raise ValueError(f"unknown feature name {name!r}")


@dataclass(frozen=True)
class FeatureCatalog:
    """An ordered, validated tuple of feature names."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate feature names in catalog")
        for name in self.names:
            _parse_name(name)
        object.__setattr__(
            self, "_index", {name: i for i, name in enumerate(self.names)}
        )

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index  # type: ignore[attr-defined]

    def index(self, name: str) -> int:
        try:
            return self._index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"feature {name!r} not in catalog") from None


def catalog(names: Iterable[str]) -> FeatureCatalog:
    return FeatureCatalog(tuple(names))


@dataclass(frozen=True)
class FeatureVector:
    """Feature values aligned with a catalog."""

    catalog: FeatureCatalog
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.catalog),):
            raise ValueError(
                f"expected {len(self.catalog)} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", v)

    def value(self, name: str) -> float:
        return float(self.values[self.catalog.index(name)])


@dataclass(frozen=True)
class TrainingExample:
    editor_id: int
    features: FeatureVector
    y: int

    def __post_init__(self) -> None:
        if self.y < 0:
            raise ValueError("target y must be non-negative")


def extract(
    history: EditorHistory, cfg: CutoffConfig, cat: FeatureCatalog
) -> FeatureVector:
    """Compute one editor's feature vector at the cutoff."""
    ctx = _Extractor(history, cfg)
    return FeatureVector(cat, np.array([ctx.value(n) for n in cat.names]))


class _Extractor:
    """Per-history cache shared by all feature computations."""

    def __init__(self, history: EditorHistory, cfg: CutoffConfig):
        self.cfg = cfg
        self.cutoff = cfg.cutoff_ts
        self.registration_ts = history.registration_ts
        edits = history.edits
        self.ts = np.array([e.timestamp for e in edits], dtype=np.int64)
        self.was_reverted = np.array([e.was_reverted for e in edits], dtype=bool)
        self.is_revert = np.array([e.is_revert_action for e in edits], dtype=bool)
        self.namespace = np.array([e.namespace for e in edits], dtype=np.int64)
        self.article = np.array([e.article_id for e in edits], dtype=np.int64)
        self.comment = np.array([e.has_comment for e in edits], dtype=bool)
        self._cache: dict[str, float] = {}

    def value(self, name: str) -> float:
        got = self._cache.get(name)
        if got is None:
            got = self._compute(name)
            self._cache[name] = got
        return got

    def _compute(self, name: str) -> float:
        kind, args = _parse_name(name)
        if kind == "log":
            return float(np.log1p(self.value(args[0])))
        if kind == "product":
            return self.value(args[0]) * self.value(args[1])
        if kind == "base" and name in _WINDOW_ALIASES:
            kind, args = "window", _WINDOW_ALIASES[name]
        if kind == "window":
            wkind, a, b = args
            i, j = self._window_slice(a, b)
            if wkind == "e":
                return float(j - i)
            return float(np.unique(self.ts[i:j] // SECONDS_PER_DAY).size)
        return self._base(name)

    def _window_slice(self, a: int, b: int) -> tuple[int, int]:
        ml = self.cfg.month_len
        lo = self.cutoff - b * ml
        hi = self.cutoff - a * ml
        return int(np.searchsorted(self.ts, lo)), int(np.searchsorted(self.ts, hi))

    def _persistence_slice(self) -> tuple[int, int]:
        return self._window_slice(0, self.cfg.persistence_months)

    def _base(self, name: str) -> float:
        age_days = max(0.0, (self.cutoff - self.registration_ts) / SECONDS_PER_DAY)
        if name == "age_days":
            return age_days
        if name == "days_since_last_edit":
            n_before = int(np.searchsorted(self.ts, self.cutoff))
            if n_before == 0:
                return age_days
            gap = (self.cutoff - int(self.ts[n_before - 1])) / SECONDS_PER_DAY
            return min(max(gap, 0.0), age_days)
        i, j = self._persistence_slice()
        if name == "reverts_gotten_p":
            return float(np.count_nonzero(self.was_reverted[i:j]))
        if name == "reverts_made_p":
            return float(np.count_nonzero(self.is_revert[i:j]))
        if name == "e_ns0_p":
            return float(np.count_nonzero(self.namespace[i:j] == 0))
        if name == "articles_p":
            return float(np.unique(self.article[i:j]).size)
        if name == "comment_frac_p":
            return float(np.mean(self.comment[i:j])) if j > i else 0.0
        raise ValueError(f"unknown base feature {name!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Frozen catalogs
# ---------------------------------------------------------------------------

def _loglog_window_names() -> list[str]:
    windows = [(0, b) for b in range(1, 11)] + [(a, a + 1) for a in range(1, 10)]
    return [f"{kind}_w{a}_{b}" for kind in ("e", "d") for a, b in windows]

_NON_WINDOW = (
    "days_since_last_edit",
    "age_days",
    "reverts_gotten_p",
    "reverts_made_p",
    "e_ns0_p",
    "articles_p",
    "comment_frac_p",
)

_BASELINE = BASE_FEATURES

_LOGLOG80 = tuple(
    _loglog_window_names()
    + [f"log1p({n})" for n in _loglog_window_names()]
    + list(_NON_WINDOW)
)

_INTERACTION_A = _BASELINE + ("e_p*e_prev", "e_1*d_p")
_INTERACTION_B = _BASELINE + ("e_p*d_p", "e_prev*d_prev")
_INTERACTION_C = _BASELINE + ("e_1*e_p", "d_p*d_prev")

_RF_NEW14 = (
    "e_p",
    "e_1",
    "e_prev",
    "d_p",
    "d_prev",
    "days_since_last_edit",
    "age_days",
    "reverts_made_p",
    "e_ns0_p",
    "articles_p",
    "comment_frac_p",
    "log1p(e_p)",
    "log1p(d_p)",
    "log1p(days_since_last_edit)",
)

_RF_OLD19 = BASE_FEATURES + (
    "log1p(e_p)",
    "log1p(e_1)",
    "log1p(e_prev)",
    "log1p(d_p)",
    "log1p(d_prev)",
    "log1p(age_days)",
    "log1p(articles_p)",
)

# One feature list per NESTED7 cell, 36 slopes in all; with the seven
# intercepts that makes 43 fitted parameters. Cells where d_p is pinned
# to zero lean on the prior five-month window and recency instead.
_NESTED7 = (
    ("d_prev", "e_prev", "age_days", "days_since_last_edit"),
    ("e_p", "d_p", "e_prev", "d_prev", "age_days"),
    ("e_p", "d_p", "e_1", "e_prev", "reverts_gotten_p", "age_days"),
    ("d_prev", "e_prev", "days_since_last_edit", "age_days"),
    ("e_p", "e_1", "e_prev", "days_since_last_edit", "age_days"),
    ("e_p", "d_p", "e_1", "reverts_made_p", "days_since_last_edit", "age_days"),
    ("e_p", "d_p", "e_1", "e_prev", "reverts_made_p", "age_days"),
)


def standard_catalogs() -> dict[str, FeatureCatalog | tuple[FeatureCatalog, ...]]:
    """The frozen feature catalogs used by the model lineup."""
    return {
        "baseline": catalog(_BASELINE),
        "loglog80": catalog(_LOGLOG80),
        "interaction_a": catalog(_INTERACTION_A),
        "interaction_b": catalog(_INTERACTION_B),
        "interaction_c": catalog(_INTERACTION_C),
        "nested_per_segment": tuple(catalog(names) for names in _NESTED7),
        "rf_new14": catalog(_RF_NEW14),
        "rf_old19": catalog(_RF_OLD19),
    }


# ---------------------------------------------------------------------------
# Dataset-level extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureTable:
    """Extracted features for a population: one row per editor."""

    catalog: FeatureCatalog
    editor_ids: np.ndarray
    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.X.shape != (self.editor_ids.size, len(self.catalog)):
            raise ValueError("feature matrix shape does not match catalog")
        if self.y is not None and self.y.shape != (self.editor_ids.size,):
            raise ValueError("target vector length does not match rows")

    @property
    def n(self) -> int:
        return int(self.editor_ids.size)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.catalog.index(name)]

    def take(self, indices: np.ndarray) -> "FeatureTable":
        return FeatureTable(
            self.catalog,
            self.editor_ids[indices],
            self.X[indices],
            None if self.y is None else self.y[indices],
        )

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(self.catalog, self.X[i])

    def examples(self) -> list[TrainingExample]:
        if self.y is None:
            raise ValueError("table has no targets")
        return [
            TrainingExample(int(self.editor_ids[i]), self.row(i), int(self.y[i]))
            for i in range(self.n)
        ]


def extract_table(
    histories: Sequence[EditorHistory],
    cfg: CutoffConfig,
    cat: FeatureCatalog,
    with_target: bool = True,
) -> FeatureTable:
    """Extract a FeatureTable (and forward-window targets) for a population."""
    n = len(histories)
    X = np.empty((n, len(cat)), dtype=np.float64)
    ids = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64) if with_target else None
    for i, h in enumerate(histories):
        ctx = _Extractor(h, cfg)
        X[i] = [ctx.value(name) for name in cat.names]
        ids[i] = h.editor_id
        if y is not None:
            y[i] = target_edits(h, cfg)
    return FeatureTable(cat, ids, X, y)


def table_from_examples(examples: Sequence[TrainingExample]) -> FeatureTable:
    """Stack homogeneous training examples back into a FeatureTable."""
    if not examples:
        raise ValueError("empty dataset")
    cat = examples[0].features.catalog
    for ex in examples:
        if ex.features.catalog.names != cat.names:
            raise ValueError("examples use differing catalogs")
    return FeatureTable(
        cat,
        np.array([ex.editor_id for ex in examples], dtype=np.int64),
        np.stack([ex.features.values for ex in examples]),
        np.array([ex.y for ex in examples], dtype=np.int64),
    )
