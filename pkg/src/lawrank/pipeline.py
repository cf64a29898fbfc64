"""Task-level orchestration: case retrieval (task1), entailed-paragraph
retrieval (task2), statute retrieval (task3), training-pair construction,
and run-file I/O.

All pipelines are deterministic given (corpus bytes, config, seed, score
tables).  Per-query work is independent; with jobs > 1 queries are
processed by a thread pool and merged in a stable order.
"""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Callable, Iterable, Mapping, Sequence, TypeVar

from .corpus import CorpusStore, ProcessedDocument, year_filter
from .ensemble import FusionParams, trail_select, weighted_fuse
from .errors import DataError
from .lexindex import Bm25Index, tokenize
from .semscore import ScoreTable, lookup

log = logging.getLogger(__name__)

_T = TypeVar("_T")
_R = TypeVar("_R")


# ---------------------------------------------------------------------------
# Configuration and result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task1Config:
    """Case-retrieval knobs: paragraph fan-out, query features, final cap."""

    per_paragraph_k: int = 200
    use_year_in_query: bool = False
    important_only: bool = False
    min_hits: int = 1
    max_cases: int = 10
    fusion: FusionParams | None = None

    def __post_init__(self) -> None:
        if self.per_paragraph_k < 1:
            raise ValueError("per_paragraph_k must be >= 1")
        if self.max_cases < 1:
            raise ValueError("max_cases must be >= 1")
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")


@dataclass(frozen=True)
class Task3Config:
    """Statute-retrieval knobs: candidate depths per phase plus fusion."""

    train_topk: int = 30
    infer_topk: int = 500
    fusion: FusionParams = field(default_factory=lambda: FusionParams(1.0, 0.0, 0.0))

    def __post_init__(self) -> None:
        if self.train_topk < 1 or self.infer_topk < 1:
            raise ValueError("topk values must be >= 1")
        if self.train_topk > self.infer_topk:
            raise ValueError("train_topk must not exceed infer_topk")


@dataclass(frozen=True)
class CandidateAggregate:
    candidate_id: str
    best_score: float
    hit_count: int


@dataclass(frozen=True)
class TrainingPair:
    query_id: str
    candidate_id: str
    label: str  # "positive" | "negative"


@dataclass
class RunResult:
    """Ranked or selected candidates per query, the unit every stage exchanges."""

    run_name: str
    rankings: dict[str, list[tuple[str, float]]]

    @classmethod
    def from_scores(
        cls, run_name: str, scores: Mapping[str, Iterable[tuple[str, float]]]
    ) -> "RunResult":
        """Build with per-query sorting (score desc, candidate asc) and
        duplicate checking."""
        rankings: dict[str, list[tuple[str, float]]] = {}
        for qid, pairs in scores.items():
            ranked = sorted(pairs, key=lambda item: (-item[1], item[0]))
            seen: set[str] = set()
            for cid, _ in ranked:
                if cid in seen:
                    raise DataError(f"duplicate candidate {cid!r} for query {qid!r}")
                seen.add(cid)
            rankings[qid] = ranked
        return cls(run_name=run_name, rankings=rankings)

    def selections(self) -> dict[str, list[str]]:
        return {qid: [cid for cid, _ in pairs] for qid, pairs in self.rankings.items()}


def _validate_run(run: RunResult) -> None:
    for qid, pairs in run.rankings.items():
        seen: set[str] = set()
        previous: tuple[float, str] | None = None
        for cid, score in pairs:
            if cid in seen:
                raise DataError(f"duplicate candidate {cid!r} for query {qid!r}")
            seen.add(cid)
            if not math.isfinite(score):
                raise DataError(f"non-finite score for {cid!r} in query {qid!r}")
            key = (-score, cid)
            if previous is not None and key < previous:
                raise DataError(f"query {qid!r} is not sorted by (score desc, candidate asc)")
            previous = key


def _pmap(fn: Callable[[_T], _R], items: Sequence[_T], jobs: int) -> list[_R]:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# ---------------------------------------------------------------------------
# Task 1: case retrieval
# ---------------------------------------------------------------------------


def aggregate_hits(
    hits: Iterable[tuple[str, float]], min_hits: int = 1
) -> list[CandidateAggregate]:
    """Collapse paragraph-level hits to cases: best score wins, hits counted.

    Aggregates with fewer than min_hits contributing paragraphs are dropped;
    output is sorted by best score descending, candidate ascending.
    """
    best: dict[str, float] = {}
    counts: dict[str, int] = {}
    for cid, score in hits:
        counts[cid] = counts.get(cid, 0) + 1
        if cid not in best or score > best[cid]:
            best[cid] = score
    aggregates = [
        CandidateAggregate(cid, best[cid], counts[cid])
        for cid in best
        if counts[cid] >= min_hits
    ]
    aggregates.sort(key=lambda a: (-a.best_score, a.candidate_id))
    return aggregates


def _case_of(unit_id: str) -> str:
    return unit_id.rsplit("#", 1)[0]


def run_task1(
    store: CorpusStore,
    queries: Iterable[ProcessedDocument],
    index: Bm25Index,
    sem_table: ScoreTable | None = None,
    cfg: Task1Config | None = None,
    run_name: str = "task1",
    jobs: int = 1,
) -> RunResult:
    """Retrieve supporting cases for each query case.

    Per query paragraph the paragraph-unit index is searched, hits are
    aggregated to cases, candidates newer than the query are filtered out,
    and (optionally) case-level semantic scores are fused in before the
    ranking is capped at max_cases.
    """
    cfg = cfg or Task1Config()
    if index.unit != "paragraph":
        raise ValueError("task1 requires a paragraph-unit index")

    def one_query(query: ProcessedDocument) -> tuple[str, list[tuple[str, float]]]:
        paragraphs = query.important_paragraphs() if cfg.important_only else query.paragraphs
        if not paragraphs:
            log.warning("query %r has no usable paragraphs; emitting empty result", query.id)
            return query.id, []
        hits: list[tuple[str, float]] = []
        for paragraph in paragraphs:
            query_text = paragraph.text
            if cfg.use_year_in_query and query.year is not None:
                query_text = f"{query_text} {query.year}"
            for hit in index.search(query_text, cfg.per_paragraph_k, query_id=query.id):
                hits.append((_case_of(hit.candidate_id), hit.score))
        aggregates = aggregate_hits(hits, cfg.min_hits)
        surviving = year_filter(query, [store.get(a.candidate_id) for a in aggregates])
        surviving_ids = {doc.id for doc in surviving}
        lex_vector = [
            (a.candidate_id, a.best_score)
            for a in aggregates
            if a.candidate_id in surviving_ids
        ]
        if not lex_vector:
            return query.id, []
        if cfg.fusion is not None:
            sem_vector = [
                (cid, lookup(sem_table, query.id, cid) if sem_table is not None else 0.0)
                for cid, _ in lex_vector
            ]
            fused = weighted_fuse(lex_vector, sem_vector, cfg.fusion)
            ranked = sorted(fused, key=lambda item: (-item[1], item[0]))
        else:
            ranked = lex_vector  # already sorted by (best_score desc, cid asc)
        return query.id, ranked[: cfg.max_cases]

    results = _pmap(one_query, list(queries), jobs)
    return RunResult(run_name=run_name, rankings=dict(results))


# ---------------------------------------------------------------------------
# Task 2: entailed-paragraph retrieval
# ---------------------------------------------------------------------------


def run_task2(
    query_id: str,
    query_text: str,
    paragraphs: Mapping[str, str],
    sem_table: ScoreTable | None = None,
    fusion: FusionParams | None = None,
    run_name: str = "task2",
) -> RunResult:
    """Select the paragraphs of one case that entail the query decision.

    BM25 scores every paragraph of the pool against the decision text
    (zero-overlap paragraphs score 0), semantic scores are fused in when
    available, and the trail threshold picks the final set.
    """
    if not paragraphs:
        raise DataError(f"query {query_id!r}: empty paragraph pool")
    fusion = fusion or FusionParams(1.0, 0.0, 0.0)
    index = Bm25Index(unit="document").fit(paragraphs)
    terms = tokenize(query_text)
    pool = sorted(paragraphs)
    lex_vector = [(pid, index.score(terms, pid)) for pid in pool]
    sem_vector = [
        (pid, lookup(sem_table, query_id, pid) if sem_table is not None else 0.0)
        for pid in pool
    ]
    fused = weighted_fuse(lex_vector, sem_vector, fusion)
    selected = trail_select(fused, fusion.trail_threshold)
    fused_scores = dict(fused)
    return RunResult(
        run_name=run_name,
        rankings={query_id: [(pid, fused_scores[pid]) for pid in selected]},
    )


# ---------------------------------------------------------------------------
# Task 3: statute retrieval
# ---------------------------------------------------------------------------


def run_task3(
    store: CorpusStore,
    questions: Mapping[str, str],
    sem_table: ScoreTable | None = None,
    cfg: Task3Config | None = None,
    phase: str = "infer",
    index: Bm25Index | None = None,
    run_name: str = "task3",
    jobs: int = 1,
) -> RunResult:
    """Two-stage statute retrieval: BM25 candidates, fused scores, trail cut.

    phase selects the candidate depth: "train" uses train_topk, "infer"
    uses infer_topk.
    """
    cfg = cfg or Task3Config()
    if phase not in ("train", "infer"):
        raise ValueError(f"phase must be 'train' or 'infer', got {phase!r}")
    k = cfg.train_topk if phase == "train" else cfg.infer_topk
    idx = index if index is not None else Bm25Index(unit="document").fit(store)

    def one_question(qid: str) -> tuple[str, list[tuple[str, float]]]:
        hits = idx.search(questions[qid], k, query_id=qid)
        if not hits:
            log.warning("question %r matched no articles", qid)
            return qid, []
        lex_vector = [(h.candidate_id, h.score) for h in hits]
        sem_vector = (
            [(cid, lookup(sem_table, qid, cid)) for cid, _ in lex_vector]
            if sem_table is not None
            else []
        )
        fused = weighted_fuse(lex_vector, sem_vector, cfg.fusion)
        selected = trail_select(fused, cfg.fusion.trail_threshold)
        fused_scores = dict(fused)
        return qid, [(cid, fused_scores[cid]) for cid in selected]

    results = _pmap(one_question, sorted(questions), jobs)
    return RunResult(run_name=run_name, rankings=dict(results))


# ---------------------------------------------------------------------------
# Training-pair construction
# ---------------------------------------------------------------------------


def build_pairs(
    queries: Iterable[str],
    gold: Mapping[str, AbstractSet[str]],
    retrieved: RunResult,
    seed: int,
) -> list[TrainingPair]:
    """Positive/negative pairs at a 1:2 label ratio.

    Positives are every noticed case.  Negatives are a seeded uniform
    sample (without replacement) of retrieved-but-not-noticed candidates,
    2x the positives per query, or all of them when fewer exist.
    """
    pairs: list[TrainingPair] = []
    for qid in queries:
        if qid not in retrieved.rankings:
            raise DataError(f"query {qid!r} missing from retrieved run {retrieved.run_name!r}")
        if qid not in gold:
            raise DataError(f"query {qid!r} missing from gold labels")
        noticed = set(gold[qid])
        pool = [cid for cid, _ in retrieved.rankings[qid] if cid not in noticed]
        wanted = 2 * len(noticed)
        rng = random.Random(f"{seed}:{qid}")
        if len(pool) <= wanted:
            negatives = list(pool)
            if len(negatives) < wanted:
                log.info(
                    "query %r: only %d negatives available (wanted %d)",
                    qid,
                    len(negatives),
                    wanted,
                )
        else:
            negatives = rng.sample(pool, wanted)
        pairs.extend(TrainingPair(qid, cid, "positive") for cid in sorted(noticed))
        pairs.extend(TrainingPair(qid, cid, "negative") for cid in negatives)
    return pairs


def write_pairs(pairs: Iterable[TrainingPair], path: str | Path) -> None:
    lines = [f"{p.query_id}\t{p.candidate_id}\t{p.label}" for p in pairs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# Run-file I/O
# ---------------------------------------------------------------------------


def write_run(run: RunResult, path: str | Path) -> None:
    """Write "query<TAB>candidate<TAB>score<TAB>run_name" lines.

    Refuses runs that violate the RunResult invariants.  An empty run
    leaves a single header comment so the name survives the round trip.
    """
    _validate_run(run)
    lines: list[str] = []
    for qid in sorted(run.rankings):
        for cid, score in run.rankings[qid]:
            lines.append(f"{qid}\t{cid}\t{float(score)!r}\t{run.run_name}")
    if not lines:
        lines = [f"# run: {run.run_name}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_run(path: str | Path) -> RunResult:
    """Parse a run file; read(write(r)) == r."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    run_name: str | None = None
    scores: dict[str, list[tuple[str, float]]] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            if line.startswith("# run: ") and run_name is None:
                run_name = line[len("# run: ") :]
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        qid, cid, score_text, name = parts
        try:
            score = float(score_text)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad score {score_text!r}") from exc
        if not math.isfinite(score):
            raise DataError(f"{path}:{lineno}: non-finite score {score_text!r}")
        if run_name is None:
            run_name = name
        elif name != run_name:
            raise DataError(f"{path}:{lineno}: inconsistent run name {name!r} != {run_name!r}")
        scores.setdefault(qid, []).append((cid, score))
    if run_name is None:
        raise DataError(f"{path}: empty run file without a '# run:' header")
    try:
        return RunResult.from_scores(run_name, scores)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
