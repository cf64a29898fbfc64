"""Score tables: the file boundary to externally trained semantic models.

Neural re-rankers run elsewhere and hand their scores over as TSV files
("query_id<TAB>candidate_id<TAB>score").  This module parses, serves, and
audits those tables; it never runs inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError


@dataclass
class ScoreTable:
    """Finite scores keyed by (query_id, candidate_id)."""

    entries: dict[tuple[str, str], float]
    name: str = ""
    miss_count: int = field(default=0, compare=False)


@dataclass(frozen=True)
class CoverageReport:
    hits: int
    misses: int
    missing: list[tuple[str, str]]


def load_score_table(path: str | Path, name: str | None = None) -> ScoreTable:
    """Parse a score TSV; every violation is reported with its line number."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    entries: dict[tuple[str, str], float] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        query_id, candidate_id, score_text = parts
        try:
            score = float(score_text)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad score {score_text!r}") from exc
        if not math.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score {score_text!r}")
        key = (query_id, candidate_id)
        if key in entries:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        entries[key] = score
    return ScoreTable(entries=entries, name=name if name is not None else path.stem)


def save_score_table(table: ScoreTable, path: str | Path) -> None:
    """Write sorted TSV lines; load(save(t)) reproduces t's entries exactly."""
    lines = [
        f"{qid}\t{cid}\t{score!r}"
        for (qid, cid), score in sorted(table.entries.items())
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def lookup(table: ScoreTable, query_id: str, candidate_id: str) -> float:
    """Stored score, or 0.0 for an unscored pair (the miss is counted)."""
    try:
        return table.entries[(query_id, candidate_id)]
    except KeyError:
        table.miss_count += 1
        return 0.0


def query_slice(table: ScoreTable, query_id: str) -> list[tuple[str, float]]:
    """All (candidate_id, score) entries for one query, sorted by candidate."""
    return sorted(
        (cid, score) for (qid, cid), score in table.entries.items() if qid == query_id
    )


def coverage_check(
    table: ScoreTable, pairs: Iterable[tuple[str, str]]
) -> CoverageReport:
    """How much of a pair list the table covers; missing pairs come back sorted."""
    hits = 0
    missing: list[tuple[str, str]] = []
    for pair in pairs:
        if pair in table.entries:
            hits += 1
        else:
            missing.append(pair)
    missing.sort()
    return CoverageReport(hits=hits, misses=len(missing), missing=missing)
