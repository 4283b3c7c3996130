"""Edit-event data model, TSV ingestion, and time-window counting.

Timestamps are integer seconds since the Unix epoch (UTC). A month is
exactly 30 days. Counting windows relative to a cutoff instant:

* backward window ``(a, b)`` covers ``[cutoff - b*month, cutoff - a*month)``
  and never includes the cutoff instant itself;
* the forward target window covers ``[cutoff, cutoff + target*month)`` and
  does include it.

Together the two conventions partition the timeline, so no edit can be
counted both as history and as target.

Wire format (TSV, optionally gzipped by ``.gz`` extension):

* edit log columns: editor_id, timestamp, namespace, article_id,
  delta_chars, was_reverted (0/1), reverted_by (empty if none),
  is_revert_action (0/1), has_comment (0/1)
* registration table columns: editor_id, registration_ts
"""

from __future__ import annotations

import gzip
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

SECONDS_PER_DAY = 86_400
DAYS_PER_MONTH = 30
SECONDS_PER_MONTH = DAYS_PER_MONTH * SECONDS_PER_DAY


class ParseError(ValueError):
    """A malformed line in an edit log or registration table."""


class IntegrityError(ValueError):
    """Structurally valid input that violates cross-record constraints."""


@dataclass(frozen=True, slots=True)
class EditRecord:
    """One timestamped edit event."""

    editor_id: int
    timestamp: int
    namespace: int = 0
    article_id: int = 0
    delta_chars: int = 0
    was_reverted: bool = False
    reverted_by: int | None = None
    is_revert_action: bool = False
    has_comment: bool = False

    def __post_init__(self) -> None:
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")
        if not self.was_reverted and self.reverted_by is not None:
            raise ValueError("reverted_by set on an edit that was not reverted")


@dataclass(frozen=True)
class EditorHistory:
    """An editor's registration time plus their time-sorted edits."""

    editor_id: int
    registration_ts: int
    edits: tuple[EditRecord, ...] = ()

    def __post_init__(self) -> None:
        prev = None
        for e in self.edits:
            if e.editor_id != self.editor_id:
                raise ValueError(
                    f"edit by {e.editor_id} in history of editor {self.editor_id}"
                )
            if prev is not None and e.timestamp < prev:
                raise ValueError("edits out of timestamp order")
            prev = e.timestamp
        if self.edits and self.registration_ts > self.edits[0].timestamp:
            raise ValueError(
                f"editor {self.editor_id} registered after their first edit"
            )

    @property
    def timestamps(self) -> tuple[int, ...]:
        return tuple(e.timestamp for e in self.edits)


@dataclass(frozen=True, slots=True)
class CutoffConfig:
    """Cutoff instant plus the window arithmetic shared by all modules."""

    cutoff_ts: int
    month_len: int = SECONDS_PER_MONTH
    persistence_months: int = 5
    target_months: int = 5

    def __post_init__(self) -> None:
        if self.month_len <= 0:
            raise ValueError("month_len must be positive")
        if self.persistence_months < 1 or self.target_months < 1:
            raise ValueError("persistence_months and target_months must be >= 1")


def window_count(
    history: EditorHistory, cfg: CutoffConfig, from_month: int, to_month: int
) -> int:
    """Count edits in the backward window (from_month, to_month]."""
    lo, hi = _window_bounds(cfg, from_month, to_month)
    ts = history.timestamps
    return bisect_left(ts, hi) - bisect_left(ts, lo)


def unique_edit_days(
    history: EditorHistory, cfg: CutoffConfig, from_month: int, to_month: int
) -> int:
    """Count distinct UTC epoch days with at least one edit in the window."""
    lo, hi = _window_bounds(cfg, from_month, to_month)
    ts = history.timestamps
    i, j = bisect_left(ts, lo), bisect_left(ts, hi)
    return len({t // SECONDS_PER_DAY for t in ts[i:j]})


def target_edits(history: EditorHistory, cfg: CutoffConfig) -> int:
    """Count edits in the forward target window (the quantity to predict)."""
    ts = history.timestamps
    hi = cfg.cutoff_ts + cfg.target_months * cfg.month_len
    return bisect_left(ts, hi) - bisect_left(ts, cfg.cutoff_ts)


def _window_bounds(cfg: CutoffConfig, from_month: int, to_month: int) -> tuple[int, int]:
    if from_month < 0:
        raise ValueError(f"from_month must be >= 0, got {from_month}")
    if from_month >= to_month:
        raise ValueError(
            f"window requires from_month < to_month, got ({from_month}, {to_month})"
        )
    lo = cfg.cutoff_ts - to_month * cfg.month_len
    hi = cfg.cutoff_ts - from_month * cfg.month_len
    return lo, hi


# ---------------------------------------------------------------------------
# TSV ingestion and serialization
# ---------------------------------------------------------------------------

EDIT_COLUMNS = (
    "editor_id",
    "timestamp",
    "namespace",
    "article_id",
    "delta_chars",
    "was_reverted",
    "reverted_by",
    "is_revert_action",
    "has_comment",
)
REGISTRATION_COLUMNS = ("editor_id", "registration_ts")


def parse_log(
    edit_lines: Iterable[str | bytes],
    registration_lines: Iterable[str | bytes],
    header: bool = False,
) -> list[EditorHistory]:
    """Assemble editor histories from an edit log and a registration table.

    Editors present only in the registration table come back with empty
    edit sequences. Raises ParseError (with a line number) for malformed
    lines and IntegrityError for edits whose editor is not registered.
    """
    registration: dict[int, int] = {}
    for lineno, fields in _tsv_rows(registration_lines, header, len(REGISTRATION_COLUMNS)):
        editor_id = _parse_int(fields[0], lineno, "editor_id")
        reg_ts = _parse_int(fields[1], lineno, "registration_ts")
        if editor_id in registration:
            raise IntegrityError(f"editor {editor_id} registered twice (line {lineno})")
        registration[editor_id] = reg_ts

    edits_by_editor: dict[int, list[EditRecord]] = {eid: [] for eid in registration}
    for lineno, fields in _tsv_rows(edit_lines, header, len(EDIT_COLUMNS)):
        record = _parse_edit(fields, lineno)
        if record.editor_id not in registration:
            raise IntegrityError(
                f"edit by unregistered editor {record.editor_id} (line {lineno})"
            )
        edits_by_editor[record.editor_id].append(record)

    histories = []
    for editor_id in sorted(registration):
        edits = sorted(edits_by_editor[editor_id], key=lambda e: e.timestamp)
        reg_ts = registration[editor_id]
        if edits and reg_ts > edits[0].timestamp:
            raise IntegrityError(
                f"editor {editor_id} has an edit before their registration"
            )
        histories.append(EditorHistory(editor_id, reg_ts, tuple(edits)))
    return histories


def serialize_histories(
    histories: Sequence[EditorHistory],
) -> tuple[list[str], list[str]]:
    """Render histories back to (edit log lines, registration lines)."""
    edit_lines = []
    reg_lines = []
    for h in sorted(histories, key=lambda h: h.editor_id):
        reg_lines.append(f"{h.editor_id}\t{h.registration_ts}\n")
        for e in h.edits:
            reverted_by = "" if e.reverted_by is None else str(e.reverted_by)
            edit_lines.append(
                "\t".join(
                    (
                        str(e.editor_id),
                        str(e.timestamp),
                        str(e.namespace),
                        str(e.article_id),
                        str(e.delta_chars),
                        "1" if e.was_reverted else "0",
                        reverted_by,
                        "1" if e.is_revert_action else "0",
                        "1" if e.has_comment else "0",
                    )
                )
                + "\n"
            )
    return edit_lines, reg_lines


def load_histories(
    edits_path: str | Path, registrations_path: str | Path, header: bool = False
) -> list[EditorHistory]:
    with open_text(edits_path) as ef, open_text(registrations_path) as rf:
        return parse_log(ef, rf, header=header)


def write_histories(
    histories: Sequence[EditorHistory],
    edits_path: str | Path,
    registrations_path: str | Path,
) -> None:
    edit_lines, reg_lines = serialize_histories(histories)
    with open_text(edits_path, "wt") as f:
        f.writelines(edit_lines)
    with open_text(registrations_path, "wt") as f:
        f.writelines(reg_lines)


def open_text(path: str | Path, mode: str = "rt") -> IO[str]:
    """Open a TSV file, transparently gzipped when the name ends in .gz."""
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, encoding="utf-8")  # type: ignore[return-value]
    return open(path, mode, encoding="utf-8")


def _tsv_rows(
    lines: Iterable[str | bytes], header: bool, n_columns: int
) -> Iterator[tuple[int, list[str]]]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        line = line.rstrip("\r\n")
        if header and lineno == 1:
            continue
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != n_columns:
            raise ParseError(
                f"line {lineno}: expected {n_columns} columns, got {len(fields)}"
            )
        yield lineno, fields


def _parse_int(text: str, lineno: int, column: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"line {lineno}: bad {column} value {text!r}") from None


def _parse_flag(text: str, lineno: int, column: str) -> bool:
    if text == "0":
        return False
    if text == "1":
        return True
    raise ParseError(f"line {lineno}: bad {column} flag {text!r} (want 0 or 1)")


def _parse_edit(fields: list[str], lineno: int) -> EditRecord:
    was_reverted = _parse_flag(fields[5], lineno, "was_reverted")
    reverted_by = None if fields[6] == "" else _parse_int(fields[6], lineno, "reverted_by")
    try:
        return EditRecord(
            editor_id=_parse_int(fields[0], lineno, "editor_id"),
            timestamp=_parse_int(fields[1], lineno, "timestamp"),
            namespace=_parse_int(fields[2], lineno, "namespace"),
            article_id=_parse_int(fields[3], lineno, "article_id"),
            delta_chars=_parse_int(fields[4], lineno, "delta_chars"),
            was_reverted=was_reverted,
            reverted_by=reverted_by,
            is_revert_action=_parse_flag(fields[7], lineno, "is_revert_action"),
            has_comment=_parse_flag(fields[8], lineno, "has_comment"),
        )
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"line {lineno}: {exc}") from None
