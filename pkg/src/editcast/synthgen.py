"""Synthetic editor populations with heavy-tailed activity.

Each editor draws a registration time (a configurable fraction lands
within the year before the cutoff, the rest spread uniformly over the
older span) and a latent per-month base rate drawn directly from a
Pareto(tail_exponent, x_min) law, which makes the induced 12-month edit
count Pareto-tailed with the same exponent. Edits then arrive as a
Poisson process whose marginal monthly intensity is the base rate
decayed geometrically with the editor's age at a cohort-specific rate,
and generation continues through the forward target window so the
prediction target is always defined.

A cohort's per-month decay factor d is realized as equal parts fading
and churn: while active, an editor's rate decays by sqrt(d) per month,
and each month the editor quits for good with probability 1 - sqrt(d).
The marginal intensity at age m is exactly base * d^m, but individual
trajectories can stop outright, the way real editors go inactive
rather than fading smoothly; with d = 1 there is no churn and counts
are plain Poisson. Mixing over the latent rate preserves the Pareto
tail either way. Everything derives from (seed, editor id) substreams:
the output is a pure function of the config, whatever order editors
are generated in.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .editlog import (
    SECONDS_PER_DAY,
    SECONDS_PER_MONTH,
    CutoffConfig,
    EditorHistory,
    EditRecord,
)

_EDITOR_STREAM = 7

# 2010-09-01T00:00:00Z, a familiar cutoff for this domain.
DEFAULT_CUTOFF_TS = 1_283_299_200

RECENT_WINDOW_DAYS = 365
SURVIVORSHIP_WINDOW_DAYS = 365

_NS0_PROB = 0.85
_ARTICLE_POOL_SIZE = 5
_ARTICLE_POOL_PROB = 0.6
_MAX_ARTICLE_ID = 10_000_000


@dataclass(frozen=True, slots=True)
class PopulationConfig:
    n_editors: int = 20_000
    cutoff_ts: int = DEFAULT_CUTOFF_TS
    history_months: int = 96
    frac_recent: float = 0.55
    tail_exponent: float = 2.51
    x_min: float = 1.0
    monthly_decay_old: float = 0.97
    monthly_decay_new: float = 0.90
    revert_prob: float = 0.05
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_editors < 1:
            raise ValueError("n_editors must be >= 1")
        if not 0.0 < self.frac_recent < 1.0:
            raise ValueError("frac_recent must be in (0, 1)")
        if self.tail_exponent <= 1.0:
            raise ValueError("tail_exponent must be > 1")
        if self.x_min <= 0:
            raise ValueError("x_min must be positive")
        for decay in (self.monthly_decay_old, self.monthly_decay_new):
            if not 0.0 < decay <= 1.0:
                raise ValueError("decay factors must be in (0, 1]")
        if not 0.0 <= self.revert_prob <= 1.0:
            raise ValueError("revert_prob must be in [0, 1]")
        # the pre-recent span must exist and timestamps must stay positive
        if self.history_months * SECONDS_PER_MONTH <= RECENT_WINDOW_DAYS * SECONDS_PER_DAY:
            raise ValueError("history_months must reach back beyond one year")
        if self.cutoff_ts - self.history_months * SECONDS_PER_MONTH <= 0:
            raise ValueError("history span reaches before the epoch")


def generate(config: PopulationConfig) -> list[EditorHistory]:
    """Generate one editor history per editor id, deterministically."""
    cutoff = config.cutoff_ts
    end_ts = cutoff + 5 * SECONDS_PER_MONTH
    recent_lo = cutoff - RECENT_WINDOW_DAYS * SECONDS_PER_DAY
    oldest = cutoff - config.history_months * SECONDS_PER_MONTH
    inv_tail = 1.0 / config.tail_exponent

    histories = []
    for editor_id in range(1, config.n_editors + 1):
        rng = np.random.default_rng([config.seed, _EDITOR_STREAM, editor_id])
        recent = rng.random() < config.frac_recent
        if recent:
            registration = int(rng.integers(recent_lo, cutoff))
        else:
            registration = int(rng.integers(oldest, recent_lo))
        base_rate = config.x_min * (1.0 - rng.random()) ** (-inv_tail)
        decay = config.monthly_decay_new if recent else config.monthly_decay_old
        timestamps = _draw_edit_times(rng, registration, end_ts, base_rate, decay)
        edits = _draw_attributes(rng, timestamps, editor_id, config)
        histories.append(EditorHistory(editor_id, registration, edits))
    return histories


def _draw_edit_times(
    rng: np.random.Generator,
    registration: int,
    end_ts: int,
    base_monthly: float,
    decay: float,
) -> np.ndarray:
    ml = SECONDS_PER_MONTH
    n_months = int(-(-(end_ts - registration) // ml))
    survival = np.sqrt(decay)
    if survival < 1.0:
        # geometric quit month with P(active through month m) = survival^m
        quit_month = int(rng.geometric(1.0 - survival))
        n_months = min(n_months, quit_month)
        if n_months == 0:
            return np.empty(0, dtype=np.int64)
    m = np.arange(n_months)
    starts = registration + m * ml
    ends = np.minimum(starts + ml, end_ts)
    frac = (ends - starts) / ml
    intensity = base_monthly * survival**m * frac
    counts = rng.poisson(intensity)
    chunks = []
    for i in np.flatnonzero(counts):
        ts = rng.integers(starts[i], ends[i], size=counts[i])
        ts.sort()
        chunks.append(ts)
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(chunks)


def _draw_attributes(
    rng: np.random.Generator,
    timestamps: np.ndarray,
    editor_id: int,
    config: PopulationConfig,
) -> tuple[EditRecord, ...]:
    n_edits = timestamps.size
    if n_edits == 0:
        return ()
    ns = np.where(
        rng.random(n_edits) < _NS0_PROB, 0, rng.integers(1, 4, size=n_edits)
    )
    pool = rng.integers(1, _MAX_ARTICLE_ID + 1, size=_ARTICLE_POOL_SIZE)
    from_pool = rng.random(n_edits) < _ARTICLE_POOL_PROB
    pool_pick = pool[rng.integers(0, _ARTICLE_POOL_SIZE, size=n_edits)]
    fresh_pick = rng.integers(1, _MAX_ARTICLE_ID + 1, size=n_edits)
    article = np.where(from_pool, pool_pick, fresh_pick)
    delta = np.rint(rng.laplace(20.0, 150.0, size=n_edits)).astype(np.int64)
    was_reverted = rng.random(n_edits) < config.revert_prob
    n = config.n_editors
    other = 1 + (editor_id - 1 + 1 + rng.integers(0, max(1, n - 1), size=n_edits)) % n
    is_revert = rng.random(n_edits) < config.revert_prob
    propensity = rng.random()
    has_comment = rng.random(n_edits) < propensity

    return tuple(
        EditRecord(
            editor_id=editor_id,
            timestamp=int(timestamps[i]),
            namespace=int(ns[i]),
            article_id=int(article[i]),
            delta_chars=int(delta[i]),
            was_reverted=bool(was_reverted[i]),
            reverted_by=int(other[i]) if was_reverted[i] else None,
            is_revert_action=bool(is_revert[i]),
            has_comment=bool(has_comment[i]),
        )
        for i in range(n_edits)
    )


def survivorship_filter(
    histories: Sequence[EditorHistory], cfg: CutoffConfig
) -> list[EditorHistory]:
    """Keep editors with at least one edit in the year before the cutoff.

    Mirrors the sampling rule of the data this is modeled on, which
    over-represents active editors and touches only those who joined
    more than a year before the cutoff.
    """
    lo = cfg.cutoff_ts - SURVIVORSHIP_WINDOW_DAYS * SECONDS_PER_DAY
    kept = []
    for h in histories:
        if any(lo <= e.timestamp < cfg.cutoff_ts for e in h.edits):
            kept.append(h)
    return kept


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------

_FIELD_TYPES = {f.name: f.type for f in fields(PopulationConfig)}


def parse_config_file(path: str | Path) -> PopulationConfig:
    """Read a flat key=value config; unknown keys are an error."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        converter = float if _FIELD_TYPES[key] == "float" else int
        try:
            values[key] = converter(value)
        except ValueError:
            raise ValueError(
                f"{path}:{lineno}: bad value {value!r} for {key}"
            ) from None
    return PopulationConfig(**values)  # type: ignore[arg-type]
