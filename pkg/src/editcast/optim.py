"""RMSLE-driven fitting of the parametric model ladder.

One fitting entry point covers all forms: closed-form least squares for
the log-scale model, Nelder-Mead simplex descent for everything else.
The clamped-RMSLE objective is not differentiable at the clamp boundary,
which is why a derivative-free method stands in for a quasi-Newton one;
the parameter counts involved (at most a few dozen per segment) are well
within simplex range.

Linear-model coefficients apply to raw feature values. Internally the
optimizer works on max-abs-scaled columns so the simplex sees comparable
magnitudes, and coefficients are mapped back before they leave fit().
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import metrics
from .features import FeatureCatalog, FeatureTable, FeatureVector, TrainingExample, table_from_examples
from .segments import SegmentScheme, assign_cells

# Caps the log-scale linear predictor so exp never overflows.
LOG_PRED_CAP = 50.0

# Substream tags so per-segment fits stay deterministic however they
# are scheduled.
_NM_STREAM = 11
_FALLBACK_TAG = 1_000_000


@dataclass(frozen=True, slots=True)
class OptimizerConfig:
    max_iters: int = 2000
    x_tol: float = 1e-8
    f_tol: float = 1e-10
    restarts: int = 3
    init_spread: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.x_tol <= 0 or self.f_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


# ---------------------------------------------------------------------------
# Model forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Persistence:
    """Predict the persistence-period edit count unchanged."""

    @property
    def params_per_segment(self) -> int:
        return 0

    def feature_names(self, cell: int) -> tuple[str, ...]:
        return ("e_p",)


@dataclass(frozen=True)
class DownscaledPersistence:
    """alpha * e_p with the downscaling factor fitted per segment."""

    @property
    def params_per_segment(self) -> int:
        return 1

    def feature_names(self, cell: int) -> tuple[str, ...]:
        return ("e_p",)


@dataclass(frozen=True)
class Linear:
    """y = b0 + b1*x1 + ... fitted against RMSLE.

    catalog may be a single FeatureCatalog shared by all segments or one
    catalog per segment cell.
    """

    catalog: FeatureCatalog | tuple[FeatureCatalog, ...]

    def __post_init__(self) -> None:
        for cat in self._catalogs():
            if len(cat) == 0:
                raise ValueError("linear model needs a nonempty catalog")

    def _catalogs(self) -> tuple[FeatureCatalog, ...]:
        if isinstance(self.catalog, FeatureCatalog):
            return (self.catalog,)
        return self.catalog

    @property
    def params_per_segment(self) -> int:
        sizes = {len(c) for c in self._catalogs()}
        if len(sizes) != 1:
            raise ValueError("per-segment catalogs differ in size; use n_parameters")
        return 1 + sizes.pop()

    def feature_names(self, cell: int) -> tuple[str, ...]:
        cats = self._catalogs()
        if len(cats) == 1:
            return cats[0].names
        if cell >= len(cats):
            raise ValueError(
                f"no catalog for segment cell {cell} ({len(cats)} provided)"
            )
        return cats[cell].names


@dataclass(frozen=True)
class LinearInteraction(Linear):
    """Linear form whose catalog carries product terms."""

    def __post_init__(self) -> None:
        super().__post_init__()
        for cat in self._catalogs():
            if not any("*" in name for name in cat.names):
                raise ValueError("interaction model catalog has no product terms")


@dataclass(frozen=True)
class LogLog:
    """ln(1+y) = b0 + b1*ln(1+x1) + ... solved in closed form."""

    catalog: FeatureCatalog

    def __post_init__(self) -> None:
        if len(self.catalog) == 0:
            raise ValueError("log-log model needs a nonempty catalog")

    @property
    def params_per_segment(self) -> int:
        return 1 + len(self.catalog)

    def feature_names(self, cell: int) -> tuple[str, ...]:
        return self.catalog.names


ModelForm = Union[Persistence, DownscaledPersistence, Linear, LinearInteraction, LogLog]


@dataclass(frozen=True, slots=True)
class SegmentFitReport:
    cell: int
    n_examples: int
    initial_rmsle: float
    final_rmsle: float
    iterations: int
    fallback: bool = False


@dataclass(frozen=True)
class FittedModel:
    form: ModelForm
    scheme: SegmentScheme
    coeffs: tuple[np.ndarray, ...]
    fit_report: tuple[SegmentFitReport, ...] = ()

    def __post_init__(self) -> None:
        if len(self.coeffs) != self.scheme.cell_count:
            raise ValueError("one coefficient vector per segment cell required")
        for cell, c in enumerate(self.coeffs):
            expected = 1 + len(self.form.feature_names(cell)) if not isinstance(
                self.form, (Persistence, DownscaledPersistence)
            ) else self.form.params_per_segment
            if c.shape != (expected,):
                raise ValueError(
                    f"cell {cell}: expected {expected} coefficients, got {c.shape}"
                )
            if not np.all(np.isfinite(c)):
                raise ValueError("coefficients must be finite")

    @property
    def n_parameters(self) -> int:
        return int(sum(c.size for c in self.coeffs))


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

_REFLECT, _EXPAND, _CONTRACT, _SHRINK = 1.0, 2.0, 0.5, 0.5


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0,
    cfg: OptimizerConfig,
) -> tuple[np.ndarray, float]:
    """Minimize with the simplex method; restarts keep the best vertex.

    Terminates a run when the simplex max-norm diameter drops under
    x_tol, the function spread under f_tol, or iterations hit max_iters.
    Restarts beyond the first perturb x0 with seeded Gaussian noise.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1 or x0.size == 0:
        raise ValueError("x0 must be a nonempty vector")
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at x0")

    rng = np.random.default_rng([abs(int(cfg.seed)), _NM_STREAM])
    best_x, best_f = x0.copy(), f0
    for restart in range(cfg.restarts):
        if restart == 0:
            start = x0
        else:
            start = x0 + cfg.init_spread * rng.standard_normal(x0.size) * (
                1.0 + np.abs(x0)
            )
            if not np.isfinite(float(objective(start))):
                continue
        x, f = _nelder_mead_once(objective, start, cfg)
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


def _nelder_mead_once(objective, x0, cfg) -> tuple[np.ndarray, float]:
    dim = x0.size
    simplex = [x0.copy()]
    for i in range(dim):
        v = x0.copy()
        v[i] += cfg.init_spread * (1.0 + abs(x0[i]))
        simplex.append(v)
    fs = [float(objective(v)) for v in simplex]

    for _ in range(cfg.max_iters):
        order = sorted(range(dim + 1), key=lambda i: fs[i])
        simplex = [simplex[i] for i in order]
        fs = [fs[i] for i in order]

        diameter = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
        if diameter < cfg.x_tol or fs[-1] - fs[0] < cfg.f_tol:
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = centroid + _REFLECT * (centroid - worst)
        f_r = float(objective(reflected))

        if fs[0] <= f_r < fs[-2]:
            simplex[-1], fs[-1] = reflected, f_r
            continue
        if f_r < fs[0]:
            expanded = centroid + _EXPAND * (centroid - worst)
            f_e = float(objective(expanded))
            if f_e < f_r:
                simplex[-1], fs[-1] = expanded, f_e
            else:
                simplex[-1], fs[-1] = reflected, f_r
            continue
        if f_r < fs[-1]:
            contracted = centroid + _CONTRACT * (centroid - worst)
            f_c = float(objective(contracted))
            if f_c <= f_r:
                simplex[-1], fs[-1] = contracted, f_c
                continue
        else:
            contracted = centroid - _CONTRACT * (centroid - worst)
            f_c = float(objective(contracted))
            if f_c < fs[-1]:
                simplex[-1], fs[-1] = contracted, f_c
                continue
        for i in range(1, dim + 1):
            simplex[i] = simplex[0] + _SHRINK * (simplex[i] - simplex[0])
            fs[i] = float(objective(simplex[i]))

    best = int(np.argmin(fs))
    return simplex[best].copy(), fs[best]


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _raw_predictions(
    form: ModelForm, coeffs: np.ndarray, X: np.ndarray
) -> np.ndarray:
    """Model output for pre-sliced feature columns, before clamping."""
    if isinstance(form, Persistence):
        return X[:, 0]
    if isinstance(form, DownscaledPersistence):
        return coeffs[0] * X[:, 0]
    if isinstance(form, LogLog):
        z = np.minimum(coeffs[0] + np.log1p(X) @ coeffs[1:], LOG_PRED_CAP)
        return np.expm1(z)
    return coeffs[0] + X @ coeffs[1:]


def _clamp(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def predict_table(model: FittedModel, table: FeatureTable) -> np.ndarray:
    """Clamped predictions for every row of an extracted feature table."""
    n = table.n
    out = np.empty(n, dtype=np.float64)
    cells = _segment_cells(model.scheme, table)
    for cell in range(model.scheme.cell_count):
        rows = np.flatnonzero(cells == cell)
        if rows.size == 0:
            continue
        cols = _column_indices(table.catalog, model.form.feature_names(cell))
        out[rows] = _raw_predictions(
            model.form, model.coeffs[cell], table.X[np.ix_(rows, cols)]
        )
    return _clamp(out)


def predict(model: FittedModel, features: FeatureVector) -> float:
    """Clamped prediction for a single editor."""
    table = FeatureTable(
        features.catalog, np.zeros(1, dtype=np.int64), features.values[None, :]
    )
    return float(predict_table(model, table)[0])


def _column_indices(cat: FeatureCatalog, names: Sequence[str]) -> np.ndarray:
    return np.array([cat.index(n) for n in names], dtype=np.int64)


def _segment_cells(scheme: SegmentScheme, table: FeatureTable) -> np.ndarray:
    if scheme is SegmentScheme.WHOLE:
        return np.zeros(table.n, dtype=np.int64)
    return assign_cells(table.column("age_days"), table.column("d_p"), scheme)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit(
    dataset: Sequence[TrainingExample] | FeatureTable,
    form: ModelForm,
    scheme: SegmentScheme,
    cfg: OptimizerConfig | None = None,
    init_coeffs: Sequence[np.ndarray] | None = None,
) -> FittedModel:
    """Fit one model form per segment cell by minimizing training RMSLE.

    Segments with fewer than max(10, 2 * params) examples fall back to
    the coefficients of a whole-data fit. The fitted coefficients never
    score worse on their own training rows than the initial point
    (optionally supplied per cell via init_coeffs).
    """
    cfg = cfg or OptimizerConfig()
    table = dataset if isinstance(dataset, FeatureTable) else table_from_examples(dataset)
    if table.n == 0:
        raise ValueError("empty dataset")
    if table.y is None:
        raise ValueError("dataset has no targets")

    cells = _segment_cells(scheme, table)
    y = table.y.astype(np.float64)

    whole: dict[int, tuple[np.ndarray, SegmentFitReport]] = {}

    def whole_fit(cell: int) -> np.ndarray:
        names = form.feature_names(cell)
        key = hash(names)
        if key not in whole:
            cols = _column_indices(table.catalog, names)
            whole[key] = _fit_segment(
                form, table.X[:, cols], y, cfg, _FALLBACK_TAG + cell, None
            )
        return whole[key][0]

    coeffs: list[np.ndarray] = []
    reports: list[SegmentFitReport] = []
    for cell in range(scheme.cell_count):
        rows = np.flatnonzero(cells == cell)
        names = form.feature_names(cell)
        cols = _column_indices(table.catalog, names)
        p = 0 if isinstance(form, Persistence) else (
            1 if isinstance(form, DownscaledPersistence) else 1 + len(names)
        )
        init = None if init_coeffs is None else np.asarray(init_coeffs[cell], dtype=np.float64)
        if rows.size < max(10, 2 * p) and scheme is not SegmentScheme.WHOLE:
            c = whole_fit(cell)
            score = float("nan")
            if rows.size:
                pred = _clamp(_raw_predictions(form, c, table.X[np.ix_(rows, cols)]))
                score = metrics.rmsle(pred, y[rows]).epsilon
            coeffs.append(c)
            reports.append(
                SegmentFitReport(cell, int(rows.size), score, score, 0, fallback=True)
            )
            continue
        c, report = _fit_segment(
            form, table.X[np.ix_(rows, cols)], y[rows], cfg, cell, init
        )
        coeffs.append(c)
        reports.append(
            SegmentFitReport(
                cell, int(rows.size), report.initial_rmsle, report.final_rmsle,
                report.iterations,
            )
        )
    return FittedModel(form, scheme, tuple(coeffs), tuple(reports))


def _fit_segment(
    form: ModelForm,
    X: np.ndarray,
    y: np.ndarray,
    cfg: OptimizerConfig,
    cell_tag: int,
    init: np.ndarray | None,
) -> tuple[np.ndarray, SegmentFitReport]:
    log_y = np.log1p(y)

    def score(raw: np.ndarray) -> float:
        d = np.log1p(_clamp(raw)) - log_y
        return float(np.sqrt(np.mean(d * d)))

    if isinstance(form, Persistence):
        c = np.zeros(0)
        s = score(X[:, 0])
        return c, SegmentFitReport(0, len(y), s, s, 0)

    if isinstance(form, LogLog):
        c = _solve_loglog(X, y)
        s = score(_raw_predictions(form, c, X))
        return c, SegmentFitReport(0, len(y), s, s, 0)

    seg_cfg = OptimizerConfig(
        max_iters=cfg.max_iters, x_tol=cfg.x_tol, f_tol=cfg.f_tol,
        restarts=cfg.restarts, init_spread=cfg.init_spread,
        seed=abs(int(cfg.seed)) * 2039 + cell_tag,
    )

    if isinstance(form, DownscaledPersistence):
        e_p = X[:, 0]
        x0 = np.array([1.0]) if init is None else init

        def objective(a: np.ndarray) -> float:
            return score(a[0] * e_p)

        c, _ = nelder_mead(objective, x0, seg_cfg)
        s0, s1 = objective(x0), objective(c)
        return c, SegmentFitReport(0, len(y), s0, s1, seg_cfg.max_iters)

    # Linear / LinearInteraction: optimize on max-abs-scaled columns.
    scales = np.maximum(1.0, np.max(np.abs(X), axis=0)) if len(y) else np.ones(X.shape[1])
    Xs = X / scales
    x0_raw = _linear_init(X, y) if init is None else init
    x0 = x0_raw.copy()
    x0[1:] = x0_raw[1:] * scales

    def objective(b: np.ndarray) -> float:
        return score(b[0] + Xs @ b[1:])

    c_scaled, _ = nelder_mead(objective, x0, seg_cfg)
    s0, s1 = objective(x0), objective(c_scaled)
    c = c_scaled.copy()
    c[1:] = c_scaled[1:] / scales
    return c, SegmentFitReport(0, len(y), s0, s1, seg_cfg.max_iters)


def _linear_init(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Start the simplex at the zero-order expansion of the log-scale fit:
    intercept at the back-transformed mean fitted log target, slopes zero.
    Falls back to the optimal constant when the solve misbehaves.
    """
    out = np.zeros(1 + X.shape[1])
    try:
        beta = _solve_loglog(X, y)
        z = np.minimum(beta[0] + np.log1p(X) @ beta[1:], LOG_PRED_CAP)
        const = float(np.expm1(np.clip(np.mean(z), 0.0, LOG_PRED_CAP)))
        if not np.isfinite(const):
            raise FloatingPointError
        out[0] = max(const, 0.0)
    except (np.linalg.LinAlgError, FloatingPointError):
        out[0] = metrics.optimal_constant(y)
    return out


_RIDGE = 1e-8


def _solve_loglog(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Ridge-stabilized normal equations for ln(1+y) on [1, ln(1+X)].

    Two iterative-refinement passes push the residual gradient of the
    normal equations down to rounding level even for collinear columns.
    """
    phi = np.column_stack([np.ones(len(y)), np.log1p(X)])
    z = np.log1p(y)
    A = phi.T @ phi + _RIDGE * np.eye(phi.shape[1])
    b = phi.T @ z
    beta = np.linalg.solve(A, b)
    for _ in range(2):
        beta = beta + np.linalg.solve(A, b - A @ beta)
    return beta


# ---------------------------------------------------------------------------
# Residual second stage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualModel:
    """A base model plus a per-segment linear correction, clamped at zero."""

    base: FittedModel
    stage2: FittedModel

    @property
    def n_parameters(self) -> int:
        return self.base.n_parameters + self.stage2.n_parameters


def fit_residual(
    dataset: Sequence[TrainingExample] | FeatureTable,
    base: FittedModel,
    stage2_catalog: FeatureCatalog,
    cfg: OptimizerConfig | None = None,
) -> ResidualModel:
    """Fit a linear correction on top of a fitted base model.

    The correction coefficients minimize the end-to-end RMSLE of
    clamp(base + correction), per segment of the base model's scheme.
    """
    cfg = cfg or OptimizerConfig()
    table = dataset if isinstance(dataset, FeatureTable) else table_from_examples(dataset)
    if table.y is None:
        raise ValueError("dataset has no targets")
    base_pred = predict_table(base, table)
    y = table.y.astype(np.float64)
    log_y = np.log1p(y)
    cells = _segment_cells(base.scheme, table)
    cols = _column_indices(table.catalog, stage2_catalog.names)

    coeffs = []
    reports = []
    for cell in range(base.scheme.cell_count):
        rows = np.flatnonzero(cells == cell)
        p = 1 + len(stage2_catalog)
        if rows.size < max(10, 2 * p):
            coeffs.append(np.zeros(p))
            reports.append(SegmentFitReport(cell, int(rows.size), float("nan"),
                                            float("nan"), 0, fallback=True))
            continue
        Xr = table.X[np.ix_(rows, cols)]
        scales = np.maximum(1.0, np.max(np.abs(Xr), axis=0))
        Xs = Xr / scales
        base_r = base_pred[rows]
        ly = log_y[rows]

        def objective(b: np.ndarray) -> float:
            d = np.log1p(np.maximum(base_r + b[0] + Xs @ b[1:], 0.0)) - ly
            return float(np.sqrt(np.mean(d * d)))

        seg_cfg = OptimizerConfig(
            max_iters=cfg.max_iters, x_tol=cfg.x_tol, f_tol=cfg.f_tol,
            restarts=cfg.restarts, init_spread=cfg.init_spread,
            seed=abs(int(cfg.seed)) * 2039 + 500 + cell,
        )
        x0 = np.zeros(p)
        c_scaled, _ = nelder_mead(objective, x0, seg_cfg)
        s0, s1 = objective(x0), objective(c_scaled)
        c = c_scaled.copy()
        c[1:] = c_scaled[1:] / scales
        coeffs.append(c)
        reports.append(SegmentFitReport(cell, int(rows.size), s0, s1, seg_cfg.max_iters))

    stage2 = FittedModel(
        Linear(stage2_catalog), base.scheme, tuple(coeffs), tuple(reports)
    )
    return ResidualModel(base, stage2)


def predict_residual_table(model: ResidualModel, table: FeatureTable) -> np.ndarray:
    base_pred = predict_table(model.base, table)
    cells = _segment_cells(model.base.scheme, table)
    cols = _column_indices(table.catalog, model.stage2.form.feature_names(0))
    out = base_pred.copy()
    for cell in range(model.base.scheme.cell_count):
        rows = np.flatnonzero(cells == cell)
        if rows.size == 0:
            continue
        c = model.stage2.coeffs[cell]
        out[rows] = base_pred[rows] + c[0] + table.X[np.ix_(rows, cols)] @ c[1:]
    return _clamp(out)


# ---------------------------------------------------------------------------
# Forward selection
# ---------------------------------------------------------------------------

_SPLIT_STREAM = 23


@dataclass(frozen=True)
class ForwardSelectionResult:
    catalog: FeatureCatalog
    baseline_rmsle: float
    steps: tuple[tuple[str, float, float], ...]  # (name, val rmsle, gain)
    rejected_gain: float | None


def forward_select(
    dataset: Sequence[TrainingExample] | FeatureTable,
    candidates: FeatureCatalog,
    form: ModelForm,
    scheme: SegmentScheme,
    cfg: OptimizerConfig | None = None,
    val_frac: float = 0.2,
    min_gain: float = 1e-4,
) -> ForwardSelectionResult:
    """Greedy feature addition driven by a held-out RMSLE improvement.

    Starts from the optimal-constant baseline; each round refits the
    model with every remaining candidate added and keeps the one with
    the largest validation gain, stopping when that gain drops under
    min_gain. Ties break toward earlier candidates.
    """
    cfg = cfg or OptimizerConfig()
    if not isinstance(form, (Linear, LogLog)):
        raise ValueError("forward selection needs a catalog-based model form")
    if len(candidates) == 0:
        raise ValueError("no candidate features")
    table = dataset if isinstance(dataset, FeatureTable) else table_from_examples(dataset)
    if table.y is None:
        raise ValueError("dataset has no targets")

    rng = np.random.default_rng([abs(int(cfg.seed)), _SPLIT_STREAM])
    perm = rng.permutation(table.n)
    n_val = max(1, int(round(val_frac * table.n)))
    val_rows, train_rows = perm[:n_val], perm[n_val:]
    train, val = table.take(train_rows), table.take(val_rows)

    const = metrics.optimal_constant(train.y)
    best_score = metrics.rmsle(np.full(val.n, const), val.y).epsilon
    baseline = best_score

    selected: list[str] = []
    steps: list[tuple[str, float, float]] = []
    rejected_gain: float | None = None
    remaining = list(candidates.names)
    while remaining:
        round_best: tuple[float, str] | None = None
        for name in remaining:
            trial_form = _with_catalog(form, FeatureCatalog(tuple(selected + [name])))
            model = fit(train, trial_form, scheme, cfg)
            score = metrics.rmsle(predict_table(model, val), val.y).epsilon
            if round_best is None or score < round_best[0]:
                round_best = (score, name)
        assert round_best is not None
        score, name = round_best
        gain = best_score - score
        if gain < min_gain:
            rejected_gain = gain
            break
        selected.append(name)
        remaining.remove(name)
        steps.append((name, score, gain))
        best_score = score
    return ForwardSelectionResult(
        FeatureCatalog(tuple(selected)), baseline, tuple(steps), rejected_gain
    )


def _with_catalog(form: ModelForm, cat: FeatureCatalog) -> ModelForm:
    if isinstance(form, LinearInteraction):
        return Linear(cat) if not any("*" in n for n in cat.names) else LinearInteraction(cat)
    if isinstance(form, Linear):
        return Linear(cat)
    if isinstance(form, LogLog):
        return LogLog(cat)
    raise ValueError(f"form {form!r} has no catalog")
