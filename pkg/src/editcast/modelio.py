"""Versioned text serialization for every fitted model kind.

Line-oriented, human-readable, and exact: floats are written with 17
significant digits so deserialization reproduces the model bit for bit.
Composite models nest their parts between begin/end markers.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

from . import ensemble as agg
from . import forest as rf
from . import optim
from .features import FeatureCatalog, catalog
from .ladder import OldNewForest
from .segments import SegmentScheme

HEADER = "editcast-model v1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _fmt_vec(values) -> str:
    return " ".join(_fmt(v) for v in values)


def save_model(model: object, path: str | Path) -> None:
    Path(path).write_text("\n".join([HEADER, *_emit(model), ""]), encoding="utf-8")


def load_model(path: str | Path) -> object:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path}: not a model file (missing header)")
    it = iter(lines[1:])
    model = _parse(it)
    for left in it:
        if left.strip():
            raise ValueError(f"{path}: trailing content {left!r}")
    return model


def dumps(model: object) -> str:
    return "\n".join([HEADER, *_emit(model), ""])


# ---------------------------------------------------------------------------
# Emitters
# ---------------------------------------------------------------------------

_FORM_TAGS = {
    optim.Persistence: "persistence",
    optim.DownscaledPersistence: "downscaled",
    optim.LinearInteraction: "interaction",  # before Linear: subclass first
    optim.Linear: "linear",
    optim.LogLog: "loglog",
}


def _form_tag(form: optim.ModelForm) -> str:
    for cls, tag in _FORM_TAGS.items():
        if type(form) is cls:
            return tag
    raise ValueError(f"unknown model form {type(form).__name__}")


def _emit(model: object) -> list[str]:
    if isinstance(model, optim.FittedModel):
        return _emit_fitted(model)
    if isinstance(model, optim.ResidualModel):
        return (
            ["kind: residual", "begin base"] + _emit(model.base) + ["end base"]
            + ["begin stage2"] + _emit(model.stage2) + ["end stage2"]
        )
    if isinstance(model, rf.Forest):
        return _emit_forest(model)
    if isinstance(model, OldNewForest):
        return (
            ["kind: oldnew-forest", "begin old"] + _emit(model.old) + ["end old"]
            + ["begin new"] + _emit(model.new) + ["end new"]
        )
    if isinstance(model, agg.BaggedModel):
        lines = ["kind: bagged", f"rule: {model.rule.kind}",
                 f"members: {len(model.members)}"]
        for i, member in enumerate(model.members):
            lines += [f"begin member {i}"] + _emit(member) + [f"end member {i}"]
        return lines
    raise ValueError(f"cannot serialize {type(model).__name__}")


def _emit_fitted(model: optim.FittedModel) -> list[str]:
    lines = [f"kind: {_form_tag(model.form)}", f"scheme: {model.scheme.value}"]
    if isinstance(model.form, (optim.Linear, optim.LogLog)):
        if isinstance(model.form, optim.Linear) and isinstance(model.form.catalog, tuple):
            for i, cat in enumerate(model.form.catalog):
                lines.append(f"catalog[{i}]: " + " ".join(cat.names))
        else:
            cat = (
                model.form.catalog
                if isinstance(model.form.catalog, FeatureCatalog)
                else model.form.catalog[0]
            )
            lines.append("catalog: " + " ".join(cat.names))
    for cell, coeffs in enumerate(model.coeffs):
        lines.append(f"coeffs {cell}: " + _fmt_vec(coeffs))
    return lines


def _emit_forest(forest: rf.Forest) -> list[str]:
    c = forest.config
    lines = [
        "kind: forest",
        f"config: n_trees={c.n_trees} mtry={c.mtry if c.mtry is not None else '-'} "
        f"min_leaf={c.min_leaf} max_depth={c.max_depth} "
        f"bootstrap={int(c.bootstrap)} log_target={int(c.log_target)} seed={c.seed}",
        "features: " + " ".join(forest.feature_names),
    ]
    for i, tree in enumerate(forest.trees):
        lines.append(f"tree {i} nodes {tree.n_nodes}")
        for j in range(tree.n_nodes):
            lines.append(
                f"{tree.feature[j]} {_fmt(tree.threshold[j])} "
                f"{tree.left[j]} {tree.right[j]} {_fmt(tree.value[j])}"
            )
    return lines


# ---------------------------------------------------------------------------
# Parsers
# ---------------------------------------------------------------------------

def _expect(line: str | None, prefix: str) -> str:
    if line is None or not line.startswith(prefix):
        raise ValueError(f"expected {prefix!r}, got {line!r}")
    return line[len(prefix):].strip()


def _next(it: Iterator[str]) -> str | None:
    return next(it, None)


def _parse(it: Iterator[str]) -> object:
    kind = _expect(_next(it), "kind: ")
    if kind in ("persistence", "downscaled", "linear", "interaction", "loglog"):
        return _parse_fitted(kind, it)
    if kind == "residual":
        _expect(_next(it), "begin base")
        base = _parse(it)
        _expect(_next(it), "end base")
        _expect(_next(it), "begin stage2")
        stage2 = _parse(it)
        _expect(_next(it), "end stage2")
        return optim.ResidualModel(base, stage2)  # type: ignore[arg-type]
    if kind == "forest":
        return _parse_forest(it)
    if kind == "oldnew-forest":
        _expect(_next(it), "begin old")
        old = _parse(it)
        _expect(_next(it), "end old")
        _expect(_next(it), "begin new")
        new = _parse(it)
        _expect(_next(it), "end new")
        return OldNewForest(old, new)  # type: ignore[arg-type]
    if kind == "bagged":
        rule = agg.AggregationRule(_expect(_next(it), "rule: "))
        k = int(_expect(_next(it), "members: "))
        members = []
        for i in range(k):
            _expect(_next(it), f"begin member {i}")
            members.append(_parse(it))
            _expect(_next(it), f"end member {i}")
        return agg.BaggedModel(
            tuple(members), rule, lambda m, t: optim.predict_table(m, t)  # type: ignore[arg-type]
        )
    raise ValueError(f"unknown model kind {kind!r}")


def _parse_fitted(kind: str, it: Iterator[str]) -> optim.FittedModel:
    scheme = SegmentScheme(_expect(_next(it), "scheme: "))
    line = _next(it)
    catalogs: list[FeatureCatalog] = []
    shared: FeatureCatalog | None = None
    while line is not None and line.startswith("catalog"):
        head, _, rest = line.partition(": ")
        names = tuple(rest.split())
        if head == "catalog":
            shared = catalog(names)
        else:
            catalogs.append(catalog(names))
        line = _next(it)
    coeffs = []
    for cell in range(scheme.cell_count):
        value = _expect(line, f"coeffs {cell}: ")
        coeffs.append(np.array([float(v) for v in value.split()] if value else []))
        line = _next(it) if cell + 1 < scheme.cell_count else line
    form: optim.ModelForm
    if kind == "persistence":
        form = optim.Persistence()
    elif kind == "downscaled":
        form = optim.DownscaledPersistence()
    else:
        cat_arg = shared if shared is not None else tuple(catalogs)
        if kind == "linear":
            form = optim.Linear(cat_arg)  # type: ignore[arg-type]
        elif kind == "interaction":
            form = optim.LinearInteraction(cat_arg)  # type: ignore[arg-type]
        else:
            form = optim.LogLog(cat_arg)  # type: ignore[arg-type]
    return optim.FittedModel(form, scheme, tuple(coeffs))


def _parse_forest(it: Iterator[str]) -> rf.Forest:
    cfg_line = _expect(_next(it), "config: ")
    fields = dict(part.split("=", 1) for part in cfg_line.split())
    cfg = rf.ForestConfig(
        n_trees=int(fields["n_trees"]),
        mtry=None if fields["mtry"] == "-" else int(fields["mtry"]),
        min_leaf=int(fields["min_leaf"]),
        max_depth=int(fields["max_depth"]),
        bootstrap=bool(int(fields["bootstrap"])),
        log_target=bool(int(fields["log_target"])),
        seed=int(fields["seed"]),
    )
    names = tuple(_expect(_next(it), "features: ").split())
    trees = []
    for i in range(cfg.n_trees):
        head = _expect(_next(it), f"tree {i} nodes ")
        n_nodes = int(head)
        feature = np.empty(n_nodes, dtype=np.int64)
        threshold = np.empty(n_nodes, dtype=np.float64)
        left = np.empty(n_nodes, dtype=np.int64)
        right = np.empty(n_nodes, dtype=np.int64)
        value = np.empty(n_nodes, dtype=np.float64)
        for j in range(n_nodes):
            line = _next(it)
            if line is None:
                raise ValueError("truncated forest file")
            f, thr, lo, hi, val = line.split()
            feature[j] = int(f)
            threshold[j] = float(thr)
            left[j] = int(lo)
            right[j] = int(hi)
            value[j] = float(val)
        trees.append(rf.RegressionTree(feature, threshold, left, right, value))
    return rf.Forest(cfg, names, tuple(trees))
