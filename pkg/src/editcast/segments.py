"""Editor cohort partitioning; every parametric model is fit per cell.

Cells are defined on two inputs only: the editor's age in the system
(days) and d_p, the number of distinct days with edits during the
persistence period. Tenure boundaries use 30-day months and ties fall
into the older cell; the old/new boundary is a full 365-day year.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

JOIN_RECENT_DAYS = 150   # 5 months
JOIN_MID_DAYS = 360      # 12 months
OLD_EDITOR_DAYS = 365


class SegmentScheme(Enum):
    WHOLE = "whole"
    JOIN_DATE3 = "join3"
    OLD_NEW2 = "oldnew2"
    ACTIVITY_DAYS = "activity"
    NESTED7 = "nested7"

    @property
    def cell_count(self) -> int:
        return _CELL_COUNTS[self]

    def cell_label(self, cell: int) -> str:
        return _CELL_LABELS[self][cell]


_CELL_COUNTS = {
    SegmentScheme.WHOLE: 1,
    SegmentScheme.JOIN_DATE3: 3,
    SegmentScheme.OLD_NEW2: 2,
    SegmentScheme.ACTIVITY_DAYS: 3,
    SegmentScheme.NESTED7: 7,
}

_CELL_LABELS = {
    SegmentScheme.WHOLE: ("all",),
    SegmentScheme.JOIN_DATE3: ("joined<5mo", "joined5-12mo", "joined>12mo"),
    SegmentScheme.OLD_NEW2: ("old", "new"),
    SegmentScheme.ACTIVITY_DAYS: ("days0", "days1-2", "days3+"),
    SegmentScheme.NESTED7: (
        "old/days0",
        "old/days1-2",
        "old/days3+",
        "new/days0",
        "new/days1-2",
        "new/days3-10",
        "new/days10+",
    ),
}


@dataclass(frozen=True, slots=True)
class SegmentId:
    scheme: SegmentScheme
    cell: int

    def __post_init__(self) -> None:
        if not 0 <= self.cell < self.scheme.cell_count:
            raise ValueError(
                f"cell {self.cell} out of range for {self.scheme.value}"
            )

    @property
    def label(self) -> str:
        return self.scheme.cell_label(self.cell)


def assign(age_days: float, d_p: int, scheme: SegmentScheme) -> SegmentId:
    """Map an editor to the unique cell of the scheme containing them."""
    if age_days < 0:
        raise ValueError(f"age_days must be >= 0, got {age_days}")
    if d_p < 0:
        raise ValueError(f"d_p must be >= 0, got {d_p}")
    if scheme is SegmentScheme.WHOLE:
        cell = 0
    elif scheme is SegmentScheme.JOIN_DATE3:
        cell = 0 if age_days < JOIN_RECENT_DAYS else 1 if age_days < JOIN_MID_DAYS else 2
    elif scheme is SegmentScheme.OLD_NEW2:
        cell = 0 if age_days >= OLD_EDITOR_DAYS else 1
    elif scheme is SegmentScheme.ACTIVITY_DAYS:
        cell = 0 if d_p == 0 else 1 if d_p <= 2 else 2
    elif scheme is SegmentScheme.NESTED7:
        if age_days >= OLD_EDITOR_DAYS:
            cell = 0 if d_p == 0 else 1 if d_p <= 2 else 2
        else:
            cell = 3 + (0 if d_p == 0 else 1 if d_p <= 2 else 2 if d_p <= 10 else 3)
    else:  # pragma: no cover
        raise ValueError(f"unknown scheme {scheme!r}")
    return SegmentId(scheme, cell)


def assign_cells(age_days: np.ndarray, d_p: np.ndarray, scheme: SegmentScheme) -> np.ndarray:
    """Vectorized cell assignment; agrees elementwise with assign()."""
    age = np.asarray(age_days, dtype=np.float64)
    dp = np.asarray(d_p, dtype=np.float64)
    if np.any(age < 0) or np.any(dp < 0):
        raise ValueError("age_days and d_p must be non-negative")
    if scheme is SegmentScheme.WHOLE:
        return np.zeros(age.shape, dtype=np.int64)
    if scheme is SegmentScheme.JOIN_DATE3:
        return (age >= JOIN_RECENT_DAYS).astype(np.int64) + (age >= JOIN_MID_DAYS)
    if scheme is SegmentScheme.OLD_NEW2:
        return (age < OLD_EDITOR_DAYS).astype(np.int64)
    if scheme is SegmentScheme.ACTIVITY_DAYS:
        return (dp >= 1).astype(np.int64) + (dp >= 3)
    if scheme is SegmentScheme.NESTED7:
        old = age >= OLD_EDITOR_DAYS
        old_band = (dp >= 1).astype(np.int64) + (dp >= 3)
        new_band = (dp >= 1).astype(np.int64) + (dp >= 3) + (dp >= 11)
        return np.where(old, old_band, 3 + new_band)
    raise ValueError(f"unknown scheme {scheme!r}")  # pragma: no cover
