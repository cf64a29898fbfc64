"""Rank fusion and ensembling: weighted fusion with min-max normalization
and trail-threshold selection, boosting cascades, majority voting, and the
grid-search tuner for the fusion parameters.

A score vector is an ordered list of (candidate_id, score) pairs for one
query.  All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Callable, Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator

from . import evalkit
from .errors import DataError

log = logging.getLogger(__name__)

ScoreVector = list[tuple[str, float]]

OBJECTIVES = ("micro_f1", "macro_f2")


@dataclass(frozen=True)
class FusionParams:
    """Weights of the linear score combination plus the selection threshold."""

    alpha: float
    beta: float
    trail_threshold: float

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if not 0.0 <= self.trail_threshold <= 1.0:
            raise ValueError(f"trail_threshold must be in [0, 1], got {self.trail_threshold}")


def _check_vector(v: Sequence[tuple[str, float]], name: str) -> None:
    seen: set[str] = set()
    for cid, score in v:
        if cid in seen:
            raise ValueError(f"duplicate candidate {cid!r} in {name} vector")
        seen.add(cid)
        if not math.isfinite(score):
            raise ValueError(f"non-finite score for {cid!r} in {name} vector")


def minmax_normalize(v: Sequence[tuple[str, float]]) -> ScoreVector:
    """Map scores linearly onto [0, 1], preserving candidate order.

    A constant vector (max == min) maps to all 1.0 so that downstream
    trail selection still picks the candidates up.
    """
    if not v:
        raise ValueError("cannot normalize an empty score vector")
    _check_vector(v, "input")
    scores = [s for _, s in v]
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [(cid, 1.0) for cid, _ in v]
    span = hi - lo
    return [(cid, (s - lo) / span) for cid, s in v]


def weighted_fuse(
    lex: Sequence[tuple[str, float]],
    sem: Sequence[tuple[str, float]],
    params: FusionParams,
) -> ScoreVector:
    """Normalize both sides, combine as alpha*lex + beta*sem, normalize again.

    The candidate set is the union of both inputs; a candidate absent from
    one side takes score 0 on that side before that side is normalized.
    """
    if not lex:
        raise ValueError("lexical score vector must be non-empty")
    _check_vector(lex, "lexical")
    _check_vector(sem, "semantic")
    lex_map = dict(lex)
    sem_map = dict(sem)
    candidates = [cid for cid, _ in lex] + [cid for cid, _ in sem if cid not in lex_map]

    lex_norm = dict(minmax_normalize([(cid, lex_map.get(cid, 0.0)) for cid in candidates]))
    sem_norm = dict(minmax_normalize([(cid, sem_map.get(cid, 0.0)) for cid in candidates]))
    fused = [
        (cid, params.alpha * lex_norm[cid] + params.beta * sem_norm[cid])
        for cid in candidates
    ]
    return minmax_normalize(fused)


def trail_select(v: Sequence[tuple[str, float]], trail_threshold: float) -> list[str]:
    """Keep candidates within a relative gap of the best score.

    A candidate survives when (highest - score) / highest <= trail_threshold.
    Output is sorted by score descending, candidate id ascending; for any
    threshold >= 0 it is a prefix of that order and contains every argmax.
    """
    if not 0.0 <= trail_threshold <= 1.0:
        raise ValueError(f"trail_threshold must be in [0, 1], got {trail_threshold}")
    if not v:
        return []
    _check_vector(v, "input")
    ranked = sorted(v, key=lambda item: (-item[1], item[0]))
    highest = ranked[0][1]
    if highest <= 0:
        # degenerate, non-normalized input: fall back to the argmax set
        return [cid for cid, s in ranked if s == highest]
    return [cid for cid, s in ranked if (highest - s) / highest <= trail_threshold]


# ---------------------------------------------------------------------------
# Boosting cascade
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadeStage:
    """One elimination step: re-score survivors, keep top-m or above a floor.

    The scorer maps (query_id, candidate_id) to a score; None counts as 0.
    Exactly one of keep_top / min_score must be set.
    """

    scorer: Callable[[str, str], float | None]
    keep_top: int | None = None
    min_score: float | None = None

    def __post_init__(self) -> None:
        if (self.keep_top is None) == (self.min_score is None):
            raise ValueError("exactly one of keep_top or min_score must be set")
        if self.keep_top is not None and self.keep_top < 1:
            raise ValueError(f"keep_top must be >= 1, got {self.keep_top}")


def cascade(
    stages: Sequence[CascadeStage], query_id: str, initial: Iterable[str]
) -> list[str]:
    """Run candidates through the elimination stages in order.

    Each stage re-scores the current survivors and applies its keep rule;
    a stage that eliminates everyone short-circuits to an empty result.
    """
    if not stages:
        raise ValueError("cascade needs at least one stage")
    survivors = list(initial)
    for position, stage in enumerate(stages):
        scored = []
        for cid in survivors:
            value = stage.scorer(query_id, cid)
            scored.append((cid, 0.0 if value is None else float(value)))
        scored.sort(key=lambda item: (-item[1], item[0]))
        if stage.keep_top is not None:
            kept = scored[: stage.keep_top]
        else:
            kept = [(cid, s) for cid, s in scored if s >= stage.min_score]
        if not kept:
            log.warning(
                "cascade stage %d eliminated all candidates for query %r", position, query_id
            )
            return []
        survivors = [cid for cid, _ in kept]
    return survivors


# ---------------------------------------------------------------------------
# Majority voting
# ---------------------------------------------------------------------------


def majority_vote(
    runs: Sequence[Mapping[str, AbstractSet[str]]], quorum: int | None = None
) -> dict[str, set[str]]:
    """Keep candidates predicted by at least `quorum` runs (default: strict
    majority).

    All runs must cover the same query set.  When single-label (yes/no)
    runs tie exactly between two labels, the first-listed run's label wins
    and the tie is logged.
    """
    if not runs:
        raise ValueError("majority_vote needs at least one run")
    query_sets = [set(run) for run in runs]
    union = set.union(*query_sets)
    intersection = set.intersection(*query_sets)
    if union != intersection:
        raise DataError(
            f"runs cover mismatched query sets; disagreement on {sorted(union - intersection)}"
        )
    n = len(runs)
    threshold = quorum if quorum is not None else n // 2 + 1
    result: dict[str, set[str]] = {}
    for qid in sorted(union):
        counts = Counter(cid for run in runs for cid in run[qid])
        winners = {cid for cid, c in counts.items() if c >= threshold}
        if (
            not winners
            and len(counts) == 2
            and all(len(run[qid]) == 1 for run in runs)
            and len(set(counts.values())) == 1
        ):
            label = next(iter(runs[0][qid]))
            log.info("vote tie on query %r broken by first run: %r", qid, label)
            winners = {label}
        result[qid] = winners
    return result


# ---------------------------------------------------------------------------
# Grid search over fusion parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionGrid:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]
    thresholds: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (self.alphas and self.betas and self.thresholds):
            raise ValueError("grid axes must be non-empty")


DEFAULT_GRID = FusionGrid(
    alphas=tuple(i / 10 for i in range(11)),
    betas=tuple(i / 10 for i in range(11)),
    thresholds=tuple(i / 20 for i in range(21)),
)


@dataclass(frozen=True)
class GridPoint:
    alpha: float
    beta: float
    trail_threshold: float
    objective: float


def _objective_fn(objective: str):
    if objective == "micro_f1":
        return lambda run, gold: evalkit.micro_prf(run, gold).f1
    if objective == "macro_f2":
        return lambda run, gold: evalkit.macro_prf2(run, gold).f2
    raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")


def _evaluate_grid(
    dev_queries: Sequence[str],
    gold: Mapping[str, AbstractSet[str]],
    lex_scores: Mapping[str, Sequence[tuple[str, float]]],
    sem_scores: Mapping[str, Sequence[tuple[str, float]]],
    grid: FusionGrid,
    objective: str,
) -> tuple[FusionParams, float, list[GridPoint]]:
    if not dev_queries:
        raise ValueError("development query set must be non-empty")
    missing_gold = sorted(set(dev_queries) - set(gold))
    if missing_gold:
        raise DataError(f"dev queries missing from gold: {missing_gold}")
    missing_lex = sorted(set(dev_queries) - set(lex_scores))
    if missing_lex:
        raise DataError(f"dev queries missing from lexical scores: {missing_lex}")
    score = _objective_fn(objective)
    dev_gold = {qid: gold[qid] for qid in dev_queries}

    best: tuple[float, float, float] | None = None
    best_value = -1.0
    points: list[GridPoint] = []
    for alpha in sorted(grid.alphas):
        for beta in sorted(grid.betas):
            if alpha == 0.0 and beta == 0.0:
                continue
            fused = {
                qid: weighted_fuse(
                    lex_scores[qid], sem_scores.get(qid, []), FusionParams(alpha, beta, 0.0)
                )
                for qid in dev_queries
            }
            for t in sorted(grid.thresholds):
                run = {qid: trail_select(fused[qid], t) for qid in dev_queries}
                value = score(run, dev_gold)
                points.append(GridPoint(alpha, beta, t, value))
                # iteration order is lexicographic, so a strict improvement
                # check keeps the lexicographically smallest maximizer
                if value > best_value:
                    best_value = value
                    best = (alpha, beta, t)
    assert best is not None
    return FusionParams(*best), best_value, points


def grid_search(
    dev_queries: Sequence[str],
    gold: Mapping[str, AbstractSet[str]],
    lex_scores: Mapping[str, Sequence[tuple[str, float]]],
    sem_scores: Mapping[str, Sequence[tuple[str, float]]],
    grid: FusionGrid | None = None,
    objective: str = "macro_f2",
) -> FusionParams:
    """Exhaustively evaluate fuse+select on the dev set; return the best point.

    Ties go to the lexicographically smallest (alpha, beta, trail_threshold).
    """
    params, _, _ = _evaluate_grid(
        dev_queries, gold, lex_scores, sem_scores, grid or DEFAULT_GRID, objective
    )
    return params


def write_grid_csv(points: Sequence[GridPoint], winner: FusionParams, path: str | Path) -> None:
    """Grid report: one CSV row per point, winner appended as a comment row."""
    lines = ["alpha,beta,trail_threshold,objective"]
    lines += [f"{p.alpha!r},{p.beta!r},{p.trail_threshold!r},{p.objective!r}" for p in points]
    by_key = {(p.alpha, p.beta, p.trail_threshold): p.objective for p in points}
    winning_value = by_key[(winner.alpha, winner.beta, winner.trail_threshold)]
    lines.append(
        f"# winner,{winner.alpha!r},{winner.beta!r},{winner.trail_threshold!r},{winning_value!r}"
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Estimator-style wrappers
# ---------------------------------------------------------------------------


class WeightedFusion(BaseEstimator):
    """Stateless transformer form of weighted fusion + trail selection."""

    def __init__(self, alpha: float = 1.0, beta: float = 0.0, trail_threshold: float = 0.0):
        self.alpha = alpha
        self.beta = beta
        self.trail_threshold = trail_threshold

    def _params(self) -> FusionParams:
        return FusionParams(self.alpha, self.beta, self.trail_threshold)

    def fuse(
        self, lex: Sequence[tuple[str, float]], sem: Sequence[tuple[str, float]]
    ) -> ScoreVector:
        return weighted_fuse(lex, sem, self._params())

    def select(self, fused: Sequence[tuple[str, float]]) -> list[str]:
        return trail_select(fused, self.trail_threshold)

    def fuse_select(
        self, lex: Sequence[tuple[str, float]], sem: Sequence[tuple[str, float]]
    ) -> list[str]:
        return self.select(self.fuse(lex, sem))


class FusionGridSearch(BaseEstimator):
    """Grid-search estimator over (alpha, beta, trail_threshold).

    After fit(), exposes best_params_ (FusionParams), best_score_, and
    results_ (every evaluated GridPoint, in evaluation order).
    """

    def __init__(self, grid: FusionGrid | None = None, objective: str = "macro_f2"):
        self.grid = grid
        self.objective = objective

    def fit(
        self,
        dev_queries: Sequence[str],
        gold: Mapping[str, AbstractSet[str]],
        lex_scores: Mapping[str, Sequence[tuple[str, float]]],
        sem_scores: Mapping[str, Sequence[tuple[str, float]]],
    ) -> "FusionGridSearch":
        params, value, points = _evaluate_grid(
            dev_queries, gold, lex_scores, sem_scores, self.grid or DEFAULT_GRID, self.objective
        )
        self.best_params_ = params
        self.best_score_ = value
        self.results_ = points
        return self
