"""Parsing of simulator step CSVs into labeled per-run series.

Two shapes are accepted: a single-run steps.csv (fixed header with one
cells_l<k> column per hierarchy level) and a merged comparison.csv (adds a
leading mode column and trailing relative-error columns). Anything else is
rejected; the plotting layer never guesses at unknown headers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

_HEAD = ("step", "t", "n_dofs")
_TAIL = ("eps_total", "E_i", "E_T", "wall_ms", "marked_r", "marked_c", "reactivated")
_ERRORS = ("eps_i", "eps_T")
_INT_COLUMNS = {"step", "n_dofs", "marked_r", "marked_c", "reactivated"}
_INT_PREFIX = "cells_l"


class SchemaError(ValueError):
    """Input file does not follow the documented steps.csv schema."""


@dataclass(frozen=True)
class RunSeries:
    """One run's per-step records, keyed by column name."""

    label: str
    steps: tuple[int, ...]
    columns: dict[str, tuple[float, ...]]

    def __post_init__(self):
        if not self.steps:
            raise SchemaError(f"series {self.label!r} has no rows")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise SchemaError(f"series {self.label!r} has a non-monotone step index")
        for name, values in self.columns.items():
            if len(values) != len(self.steps):
                raise SchemaError(
                    f"series {self.label!r} column {name} has {len(values)} entries "
                    f"for {len(self.steps)} steps"
                )


def _check_header(header: list[str], path: Path) -> tuple[bool, bool]:
    """Validate the column layout; returns (has mode column, has error columns)."""
    cols = list(header)
    has_mode = bool(cols) and cols[0] == "mode"
    if has_mode:
        cols = cols[1:]
    has_errors = tuple(cols[-2:]) == _ERRORS
    if has_errors:
        cols = cols[:-2]
    if has_mode != has_errors:
        raise SchemaError(
            f"{path}: a merged comparison file carries both the mode column and "
            f"the {'/'.join(_ERRORS)} columns; found only one of the two"
        )
    cells = cols[3:-7]
    expected = [*_HEAD, *(f"{_INT_PREFIX}{k}" for k in range(len(cells))), *_TAIL]
    if not cells or cols != expected:
        raise SchemaError(f"{path}: header {header!r} is not a steps.csv layout")
    return has_mode, has_errors


def _default_label(path: Path) -> str:
    # run artifacts are all named steps.csv; the run directory tells them apart
    if path.stem == "steps" and path.parent.name:
        return path.parent.name
    return path.stem


def _column(name: str, raw: list[str], label: str, path: Path) -> tuple[float, ...]:
    kind = int if name in _INT_COLUMNS or name.startswith(_INT_PREFIX) else float
    try:
        return tuple(kind(v) for v in raw)
    except ValueError:
        raise SchemaError(
            f"{path}: column {name} of series {label!r} has a non-{kind.__name__} entry"
        ) from None


def load_runs(path: str | Path) -> list[RunSeries]:
    """All series in one CSV file, split by the mode column when present."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    has_mode, _ = _check_header(header, path)
    names = header[1:] if has_mode else header

    order: list[str] = []
    grouped: dict[str, list[list[str]]] = {}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        label = row[0] if has_mode else _default_label(path)
        if label not in grouped:
            order.append(label)
            grouped[label] = []
        grouped[label].append(row[1:] if has_mode else row)

    out = []
    for label in order:
        block = grouped[label]
        columns = {
            name: _column(name, [r[j] for r in block], label, path)
            for j, name in enumerate(names)
        }
        steps = tuple(int(v) for v in columns.pop("step"))
        out.append(RunSeries(label=label, steps=steps, columns=columns))
    return out


def load_many(paths: list[str | Path]) -> list[RunSeries]:
    """Series from several files, with duplicate labels disambiguated."""
    if not paths:
        raise SchemaError("need at least one CSV file")
    series: list[RunSeries] = []
    seen: set[str] = set()
    for path in paths:
        for s in load_runs(path):
            label = s.label
            k = 2
            while label in seen:
                label = f"{s.label}#{k}"
                k += 1
            seen.add(label)
            series.append(
                s if label == s.label else RunSeries(label, s.steps, s.columns)
            )
    return series
