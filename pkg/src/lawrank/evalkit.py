"""Retrieval evaluation: micro P/R/F1, macro P/R/F2, Recall@k, accuracy.

Micro measures pool counts over all queries; macro measures are computed
per query and averaged.  Queries present in the gold labels but absent
from a run score zero by default, so partial runs cannot inflate averages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Iterable, Mapping, Sequence

from .errors import DataError

GoldLabels = dict[str, frozenset[str]]


@dataclass(frozen=True)
class MicroReport:
    precision: float
    recall: float
    f1: float
    correct: int
    retrieved: int
    relevant: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "correct": self.correct,
            "retrieved": self.retrieved,
            "relevant": self.relevant,
        }


@dataclass(frozen=True)
class QueryScore:
    query_id: str
    precision: float
    recall: float
    f2: float


@dataclass(frozen=True)
class MacroReport:
    precision: float
    recall: float
    f2: float
    per_query: list[QueryScore]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f2": self.f2,
            "per_query": [
                {
                    "query_id": q.query_id,
                    "precision": q.precision,
                    "recall": q.recall,
                    "f2": q.f2,
                }
                for q in self.per_query
            ],
        }


def load_gold(path: str | Path) -> GoldLabels:
    """Read a JSON object mapping query_id -> list of relevant candidate ids.

    String values are accepted for label-style gold (e.g. "yes"/"no") and
    become singleton sets.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"{path}: expected a JSON object")
    gold: GoldLabels = {}
    for qid, value in obj.items():
        if isinstance(value, str):
            gold[qid] = frozenset([value])
        elif isinstance(value, list) and all(isinstance(v, str) for v in value):
            if not value:
                raise DataError(f"{path}: empty relevant set for query {qid!r}")
            gold[qid] = frozenset(value)
        else:
            raise DataError(f"{path}: value for {qid!r} must be a string or list of strings")
    if not gold:
        raise DataError(f"{path}: no gold labels")
    return gold


def _check_run_queries(run: Mapping[str, object], gold: Mapping[str, object]) -> None:
    extra = sorted(set(run) - set(gold))
    if extra:
        raise DataError(f"run contains queries missing from gold: {extra}")


def micro_prf(
    run: Mapping[str, Iterable[str]], gold: Mapping[str, AbstractSet[str]]
) -> MicroReport:
    """Pooled precision/recall/F1 over all gold queries."""
    _check_run_queries(run, gold)
    correct = retrieved = relevant = 0
    for qid in sorted(gold):
        selected = set(run.get(qid, ()))
        relevant_set = gold[qid]
        correct += len(selected & relevant_set)
        retrieved += len(selected)
        relevant += len(relevant_set)
    precision = correct / retrieved if retrieved else 0.0
    recall = correct / relevant if relevant else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return MicroReport(precision, recall, f1, correct, retrieved, relevant)


def macro_prf2(
    run: Mapping[str, Iterable[str]],
    gold: Mapping[str, AbstractSet[str]],
    skip_missing: bool = False,
) -> MacroReport:
    """Per-query precision/recall/F2 and their arithmetic means.

    With skip_missing=True, gold queries absent from the run are left out
    of the averages instead of scoring zero.
    """
    _check_run_queries(run, gold)
    per_query: list[QueryScore] = []
    for qid in sorted(gold):
        if skip_missing and qid not in run:
            continue
        selected = set(run.get(qid, ()))
        relevant_set = gold[qid]
        correct = len(selected & relevant_set)
        precision = correct / len(selected) if selected else 0.0
        recall = correct / len(relevant_set) if relevant_set else 0.0
        denom = 4 * precision + recall
        f2 = 5 * precision * recall / denom if denom > 0 else 0.0
        per_query.append(QueryScore(qid, precision, recall, f2))
    n = len(per_query)
    if n == 0:
        return MacroReport(0.0, 0.0, 0.0, [])
    return MacroReport(
        precision=sum(q.precision for q in per_query) / n,
        recall=sum(q.recall for q in per_query) / n,
        f2=sum(q.f2 for q in per_query) / n,
        per_query=per_query,
    )


def recall_at_k(
    ranked: Mapping[str, Sequence[tuple[str, float]]],
    gold: Mapping[str, AbstractSet[str]],
    ks: Iterable[int],
) -> dict[int, float]:
    """Pooled recall at each cutoff: gold hits in the top-k, over total gold."""
    ks = list(ks)
    if any(k < 1 for k in ks):
        raise ValueError(f"cutoffs must be positive, got {ks}")
    _check_run_queries(ranked, gold)
    total_gold = sum(len(gold[qid]) for qid in gold)
    out: dict[int, float] = {}
    for k in ks:
        hits = 0
        for qid in gold:
            top = {cid for cid, _ in ranked.get(qid, ())[:k]}
            hits += len(top & gold[qid])
        out[k] = hits / total_gold if total_gold else 0.0
    return out


def _as_label_set(value: object) -> frozenset[str]:
    if isinstance(value, str):
        return frozenset([value])
    return frozenset(value)  # type: ignore[arg-type]


def accuracy(
    pred: Mapping[str, object], gold: Mapping[str, object]
) -> float:
    """Fraction of gold queries whose predicted label matches exactly."""
    missing = sorted(set(gold) - set(pred))
    if missing:
        raise DataError(f"predictions missing for queries: {missing}")
    matches = sum(
        _as_label_set(pred[qid]) == _as_label_set(gold[qid]) for qid in gold
    )
    return matches / len(gold) if gold else 0.0
