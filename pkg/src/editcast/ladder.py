"""The model lineup: every model in the leaderboard, fitted in order.

Each entry upgrades the previous one, and where forms nest the optimizer
is warm-started from the smaller model's coefficients, so training
scores can only improve along the chain. The final entry combines the
eight strongest members under geometric aggregation (with an arithmetic
variant kept for comparison).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ensemble as agg
from . import forest as rf
from . import metrics, optim
from .features import FeatureCatalog, FeatureTable, catalog, standard_catalogs
from .segments import OLD_EDITOR_DAYS, SegmentScheme

_SPLIT_STREAM = 23

# Interaction terms added on top of the age/activity model: the two
# consistency products (persistence x prior period, last month x edit
# days) plus two products among its own predictors, for 8 parameters
# per segment.
_R_CATALOG = ("e_p", "age_days", "d_p")
_R_INTERACTIONS = _R_CATALOG + ("e_p*e_prev", "e_1*d_p", "e_p*d_p", "d_p*age_days")
_RESIDUAL_STAGE2 = ("e_prev",)


def _nested_variant(cats: tuple[FeatureCatalog, ...]) -> tuple[FeatureCatalog, ...]:
    """Log-transformed counterpart of the nested cell catalogs.

    The second bagged model uses a different feature set from the first,
    mirroring how the two bagged variants differed in the original
    lineup.
    """
    return tuple(
        catalog(tuple(f"log1p({n})" for n in c.names)) for c in cats
    )


def master_catalog() -> FeatureCatalog:
    """Union of every feature any lineup model consumes."""
    names: list[str] = []
    seen = set()
    cats = standard_catalogs()
    groups: list[Sequence[str]] = [
        cats["baseline"].names,  # type: ignore[union-attr]
        _R_INTERACTIONS,
        _RESIDUAL_STAGE2,
        cats["interaction_a"].names,  # type: ignore[union-attr]
        cats["interaction_b"].names,  # type: ignore[union-attr]
        cats["interaction_c"].names,  # type: ignore[union-attr]
        cats["loglog80"].names,  # type: ignore[union-attr]
        cats["rf_new14"].names,  # type: ignore[union-attr]
        cats["rf_old19"].names,  # type: ignore[union-attr]
    ]
    nested: tuple[FeatureCatalog, ...] = cats["nested_per_segment"]  # type: ignore[assignment]
    groups.extend(c.names for c in nested)
    groups.extend(c.names for c in _nested_variant(nested))
    for group in groups:
        for name in group:
            if name not in seen:
                seen.add(name)
                names.append(name)
    return catalog(names)


def split_editors(
    table: FeatureTable, frac: float = 0.8, seed: int = 0
) -> tuple[FeatureTable, FeatureTable]:
    """Deterministic by-editor train/holdout partition."""
    if not 0.0 < frac < 1.0:
        raise ValueError("split fraction must be in (0, 1)")
    rng = np.random.default_rng([abs(int(seed)), _SPLIT_STREAM])
    perm = rng.permutation(table.n)
    n_train = int(round(frac * table.n))
    if n_train == 0 or n_train == table.n:
        raise ValueError("split leaves one side empty")
    return table.take(perm[:n_train]), table.take(perm[n_train:])


@dataclass(frozen=True)
class OldNewForest:
    """Separate forests for editors over/under a year old."""

    old: rf.Forest
    new: rf.Forest

    def predict_table(self, table: FeatureTable) -> np.ndarray:
        age = table.column("age_days")
        out = np.empty(table.n, dtype=np.float64)
        old_rows = np.flatnonzero(age >= OLD_EDITOR_DAYS)
        new_rows = np.flatnonzero(age < OLD_EDITOR_DAYS)
        if old_rows.size:
            out[old_rows] = rf.predict_forest_table(self.old, table.take(old_rows))
        if new_rows.size:
            out[new_rows] = rf.predict_forest_table(self.new, table.take(new_rows))
        return out


@dataclass(frozen=True)
class EnsembleModel:
    """Combines already-fitted member models under one aggregation rule."""

    member_names: tuple[str, ...]
    members: tuple[object, ...]
    rule: agg.AggregationRule

    def predict_table(self, table: FeatureTable) -> np.ndarray:
        P = np.stack(
            [np.maximum(predict_any(m, table), 0.0) for m in self.members]
        )
        return agg.aggregate_matrix(P, self.rule)


def predict_any(model: object, table: FeatureTable) -> np.ndarray:
    """Clamped predictions from any lineup model kind."""
    if isinstance(model, optim.FittedModel):
        return optim.predict_table(model, table)
    if isinstance(model, optim.ResidualModel):
        return optim.predict_residual_table(model, table)
    if isinstance(model, rf.Forest):
        return rf.predict_forest_table(model, table)
    if isinstance(model, (OldNewForest, EnsembleModel, agg.BaggedModel)):
        return model.predict_table(table)
    raise TypeError(f"cannot predict with {type(model).__name__}")


@dataclass(frozen=True)
class LineupEntry:
    name: str
    description: str
    n_parameters: int
    model: object


# The eight members of the reference ensemble, in lineup order.
REFERENCE_MEMBERS = (
    "model_1_loglog",
    "model_2_linear",
    "model_3_interaction_a",
    "model_4_interaction_b",
    "model_5_interaction_c",
    "model_6_nested_bag_median",
    "model_7_nested_bag_geometric",
    "model_8_forest_oldnew",
)

LINEUP_ORDER = (
    "persistence",
    "downscaled_whole",
    "model_p_downscaled_join3",
    "model_q_intercept_join3",
    "model_r_age_days_join3",
    "model_r_residual",
    "model_r_interaction",
    "nested7_linear",
) + REFERENCE_MEMBERS + (
    "ensemble_geometric",
    "ensemble_arithmetic",
)


def fit_lineup(
    train: FeatureTable,
    seed: int = 0,
    models: Sequence[str] | None = None,
    bag_replicates: int = 25,
    forest_trees: tuple[int, int] = (200, 150),
) -> dict[str, LineupEntry]:
    """Fit the requested lineup models (defaults to all) on training rows.

    Models are fitted in lineup order and chain models pull in their
    prerequisites automatically.
    """
    wanted = list(LINEUP_ORDER) if models is None else list(models)
    unknown = set(wanted) - set(LINEUP_ORDER)
    if unknown:
        raise ValueError(f"unknown lineup models: {sorted(unknown)}")
    needed = _with_prerequisites(wanted)

    cats = standard_catalogs()
    nested_cats: tuple[FeatureCatalog, ...] = cats["nested_per_segment"]  # type: ignore[assignment]
    cfg = optim.OptimizerConfig(seed=seed)
    bag_cfg = optim.OptimizerConfig(seed=seed, restarts=1, max_iters=600)
    S = SegmentScheme
    out: dict[str, LineupEntry] = {}

    def fitted(name: str) -> object:
        return out[name].model

    for name in LINEUP_ORDER:
        if name not in needed:
            continue
        if name == "persistence":
            model: object = optim.fit(train, optim.Persistence(), S.WHOLE, cfg)
            entry = LineupEntry(name, "predict the persistence-period count", 0, model)
        elif name == "downscaled_whole":
            model = optim.fit(train, optim.DownscaledPersistence(), S.WHOLE, cfg)
            entry = LineupEntry(name, "downscaled persistence, no segments", 1, model)
        elif name == "model_p_downscaled_join3":
            model = optim.fit(train, optim.DownscaledPersistence(), S.JOIN_DATE3, cfg)
            entry = LineupEntry(
                name, "downscaled persistence per joining-date segment",
                _params(model), model,
            )
        elif name == "model_q_intercept_join3":
            base = fitted("model_p_downscaled_join3")
            init = [np.concatenate([[0.0], c]) for c in base.coeffs]  # type: ignore[attr-defined]
            model = optim.fit(
                train, optim.Linear(catalog(("e_p",))), S.JOIN_DATE3, cfg, init_coeffs=init
            )
            entry = LineupEntry(
                name, "downscaling plus intercept per segment", _params(model), model
            )
        elif name == "model_r_age_days_join3":
            base = fitted("model_q_intercept_join3")
            init = [np.concatenate([c, [0.0, 0.0]]) for c in base.coeffs]  # type: ignore[attr-defined]
            model = optim.fit(
                train, optim.Linear(catalog(_R_CATALOG)), S.JOIN_DATE3, cfg,
                init_coeffs=init,
            )
            entry = LineupEntry(
                name, "adds editor age and persistence edit days", _params(model), model
            )
        elif name == "model_r_residual":
            base = fitted("model_r_age_days_join3")
            model = optim.fit_residual(train, base, catalog(_RESIDUAL_STAGE2), cfg)
            entry = LineupEntry(
                name, "linear correction on the age/activity model",
                model.n_parameters, model,
            )
        elif name == "model_r_interaction":
            base = fitted("model_r_age_days_join3")
            extra = len(_R_INTERACTIONS) - len(_R_CATALOG)
            init = [np.concatenate([c, np.zeros(extra)]) for c in base.coeffs]  # type: ignore[attr-defined]
            model = optim.fit(
                train, optim.LinearInteraction(catalog(_R_INTERACTIONS)),
                S.JOIN_DATE3, cfg, init_coeffs=init,
            )
            entry = LineupEntry(
                name, "age/activity model with interaction terms", _params(model), model
            )
        elif name == "nested7_linear":
            model = optim.fit(train, optim.Linear(nested_cats), S.NESTED7, cfg)
            entry = LineupEntry(
                name, "per-cell linear model over nested segmentation",
                _params(model), model,
            )
        elif name == "model_1_loglog":
            model = optim.fit(
                train, optim.LogLog(cats["loglog80"]), S.WHOLE, cfg  # type: ignore[arg-type]
            )
            entry = LineupEntry(
                name, "log-scale linear model on the wide window catalog",
                _params(model), model,
            )
        elif name == "model_2_linear":
            model = optim.fit(
                train, optim.Linear(cats["baseline"]), S.JOIN_DATE3, cfg  # type: ignore[arg-type]
            )
            entry = LineupEntry(
                name, "linear model per joining-date segment", _params(model), model
            )
        elif name in (
            "model_3_interaction_a", "model_4_interaction_b", "model_5_interaction_c"
        ):
            key = {"model_3_interaction_a": "interaction_a",
                   "model_4_interaction_b": "interaction_b",
                   "model_5_interaction_c": "interaction_c"}[name]
            base = fitted("model_2_linear")
            cat: FeatureCatalog = cats[key]  # type: ignore[assignment]
            extra = len(cat) - len(cats["baseline"])  # type: ignore[arg-type]
            init = [np.concatenate([c, np.zeros(extra)]) for c in base.coeffs]  # type: ignore[attr-defined]
            model = optim.fit(
                train, optim.LinearInteraction(cat), S.JOIN_DATE3, cfg, init_coeffs=init
            )
            entry = LineupEntry(
                name, f"linear model plus interaction pair {key[-1]}",
                _params(model), model,
            )
        elif name == "model_6_nested_bag_median":
            model = _fit_nested_bag(train, nested_cats, bag_cfg, agg.MEDIAN,
                                    bag_replicates, seed * 10 + 6)
            entry = LineupEntry(
                name, "bagged nested linear models, median aggregated",
                43 * 1, model,
            )
        elif name == "model_7_nested_bag_geometric":
            model = _fit_nested_bag(train, _nested_variant(nested_cats), bag_cfg,
                                    agg.GEOMETRIC, bag_replicates, seed * 10 + 7)
            entry = LineupEntry(
                name,
                "bagged nested linear models on log features, geometric mean aggregated",
                43 * 1, model,
            )
        elif name == "model_8_forest_oldnew":
            model = _fit_old_new_forest(train, seed, forest_trees)
            entry = LineupEntry(
                name,
                f"random forests per old/new editor ({forest_trees[0]}/{forest_trees[1]} trees)",
                0, model,
            )
        elif name in ("ensemble_geometric", "ensemble_arithmetic"):
            rule = agg.GEOMETRIC if name == "ensemble_geometric" else agg.ARITHMETIC
            members = tuple(fitted(m) for m in REFERENCE_MEMBERS)
            model = EnsembleModel(REFERENCE_MEMBERS, members, rule)
            entry = LineupEntry(
                name, f"eight-model ensemble, {rule.kind} aggregation", 0, model
            )
        else:  # pragma: no cover
            raise AssertionError(name)
        out[name] = entry
    return out


_PREREQUISITES = {
    "model_q_intercept_join3": ("model_p_downscaled_join3",),
    "model_r_age_days_join3": ("model_q_intercept_join3",),
    "model_r_residual": ("model_r_age_days_join3",),
    "model_r_interaction": ("model_r_age_days_join3",),
    "model_3_interaction_a": ("model_2_linear",),
    "model_4_interaction_b": ("model_2_linear",),
    "model_5_interaction_c": ("model_2_linear",),
    "ensemble_geometric": REFERENCE_MEMBERS,
    "ensemble_arithmetic": REFERENCE_MEMBERS,
}


def _with_prerequisites(wanted: Sequence[str]) -> set[str]:
    needed = set(wanted)
    queue = list(wanted)
    while queue:
        for dep in _PREREQUISITES.get(queue.pop(), ()):
            if dep not in needed:
                needed.add(dep)
                queue.append(dep)
    return needed


def _params(model: optim.FittedModel) -> int:
    return model.n_parameters


def _fit_nested_bag(
    train: FeatureTable,
    nested_cats: tuple[FeatureCatalog, ...],
    cfg: optim.OptimizerConfig,
    rule: agg.AggregationRule,
    k: int,
    seed: int,
) -> agg.BaggedModel:
    form = optim.Linear(nested_cats)

    def fit_one(subset: FeatureTable) -> object:
        return optim.fit(subset, form, SegmentScheme.NESTED7, cfg)

    return agg.bootstrap_bag(
        train, fit_one, lambda m, t: optim.predict_table(m, t),  # type: ignore[arg-type]
        k=k, rule=rule, seed=seed,
    )


def _fit_old_new_forest(
    train: FeatureTable, seed: int, trees: tuple[int, int]
) -> OldNewForest:
    cats = standard_catalogs()
    age = train.column("age_days")
    old_rows = np.flatnonzero(age >= OLD_EDITOR_DAYS)
    new_rows = np.flatnonzero(age < OLD_EDITOR_DAYS)
    old = rf.train_forest(
        train.take(old_rows), cats["rf_old19"],  # type: ignore[arg-type]
        rf.ForestConfig(n_trees=trees[0], seed=seed * 10 + 8),
    )
    new = rf.train_forest(
        train.take(new_rows), cats["rf_new14"],  # type: ignore[arg-type]
        rf.ForestConfig(n_trees=trees[1], seed=seed * 10 + 9),
    )
    return OldNewForest(old, new)


@dataclass(frozen=True, slots=True)
class LeaderboardRow:
    name: str
    n_parameters: int
    n: int
    epsilon: float


def leaderboard(
    lineup: dict[str, LineupEntry], holdout: FeatureTable
) -> list[LeaderboardRow]:
    """Score every fitted entry on the holdout, in lineup order."""
    if holdout.y is None:
        raise ValueError("holdout has no targets")
    rows = []
    for name in LINEUP_ORDER:
        if name not in lineup:
            continue
        entry = lineup[name]
        pred = predict_any(entry.model, holdout)
        result = metrics.rmsle(pred, holdout.y)
        rows.append(LeaderboardRow(name, entry.n_parameters, result.n, result.epsilon))
    return rows
