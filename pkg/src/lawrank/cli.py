"""Batch command-line surface.

One subcommand per pipeline stage (index, retrieve, fuse, vote, tune,
eval, build-pairs) so that every intermediate artifact is an inspectable
file.  Exit codes: 0 success, 1 usage error, 2 data error.  Every command
that writes into an --out-dir also echoes its effective configuration
there as config.json.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import ensemble, evalkit, pipeline, semscore
from .corpus import load_corpus
from .ensemble import FusionGrid, FusionGridSearch, FusionParams
from .errors import DataError
from .lexindex import Bm25Index
from .pipeline import RunResult, Task1Config, Task3Config

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; unknown keys are rejected."""

    task: str = "task3"
    corpus: str = ""
    corpus_layout: str = "jsonl"
    queries: str = ""
    queries_layout: str = "jsonl"
    score_table: str = ""
    gold: str = ""
    run_name: str = "run"
    unit: str = "document"
    k1: float = 1.2
    b: float = 0.75
    per_paragraph_k: int = 200
    use_year_in_query: bool = False
    important_only: bool = False
    min_hits: int = 1
    max_cases: int = 10
    use_fusion: bool = False
    train_topk: int = 30
    infer_topk: int = 500
    phase: str = "infer"
    alpha: float = 1.0
    beta: float = 0.0
    trail_threshold: float = 0.0
    objective: str = "macro_f2"
    ks: str = "10,20,50,100,200"
    quorum: int = 0  # 0 means strict majority
    seed: int = 17
    jobs: int = 1

    def fusion_params(self) -> FusionParams:
        return FusionParams(self.alpha, self.beta, self.trail_threshold)


_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value: object) -> object:
    target = type(getattr(ExperimentConfig(), key))
    if isinstance(value, target) and not (target is int and isinstance(value, bool)):
        return value
    if isinstance(value, str):
        if target is bool:
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise UsageError(f"config key {key!r}: cannot parse boolean from {value!r}")
        if target in (int, float):
            try:
                return target(value)
            except ValueError:
                raise UsageError(f"config key {key!r}: cannot parse {target.__name__} from {value!r}")
        return value
    if target is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    raise UsageError(f"config key {key!r}: expected {target.__name__}, got {type(value).__name__}")


def load_config(path: str | None, overrides: list[str]) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{path}: config must be a JSON object")
        for key, value in obj.items():
            if key not in _CONFIG_FIELDS:
                raise UsageError(f"{path}: unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, value))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def _echo_config(cfg: ExperimentConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n"
    (out_dir / "config.json").write_text(payload, encoding="utf-8")


def _load_table(cfg: ExperimentConfig) -> semscore.ScoreTable | None:
    return semscore.load_score_table(cfg.score_table) if cfg.score_table else None


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"cannot parse cutoff list from {text!r}")
    if not ks:
        raise UsageError("empty cutoff list")
    return ks


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_index(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    store = load_corpus(cfg.corpus, cfg.corpus_layout)
    index = Bm25Index(unit=cfg.unit, k1=cfg.k1, b=cfg.b).fit(store)
    _echo_config(cfg, out_dir)
    index.save(out_dir / "index.bin")
    print(f"indexed {index.n_units_} units, {len(index.postings_)} terms -> {out_dir / 'index.bin'}")
    return EXIT_OK


def _retrieve_task1(cfg: ExperimentConfig) -> RunResult:
    store = load_corpus(cfg.corpus, cfg.corpus_layout)
    queries = load_corpus(cfg.queries, cfg.queries_layout)
    index = Bm25Index(unit="paragraph", k1=cfg.k1, b=cfg.b).fit(store)
    task_cfg = Task1Config(
        per_paragraph_k=cfg.per_paragraph_k,
        use_year_in_query=cfg.use_year_in_query,
        important_only=cfg.important_only,
        min_hits=cfg.min_hits,
        max_cases=cfg.max_cases,
        fusion=cfg.fusion_params() if cfg.use_fusion else None,
    )
    return pipeline.run_task1(
        store,
        list(queries),
        index,
        sem_table=_load_table(cfg),
        cfg=task_cfg,
        run_name=cfg.run_name,
        jobs=cfg.jobs,
    )


def _retrieve_task2(cfg: ExperimentConfig) -> RunResult:
    store = load_corpus(cfg.corpus, "coliee_task2_dir")
    table = _load_table(cfg)
    fusion = cfg.fusion_params()
    by_query: dict[str, dict[str, str]] = {}
    fragments: dict[str, str] = {}
    for doc in store:
        qid, _, rest = doc.id.partition("/")
        if rest == "entailed_fragment.txt":
            fragments[qid] = doc.full_text
        else:
            by_query.setdefault(qid, {})[rest.removeprefix("paragraphs/")] = doc.full_text
    rankings: dict[str, list[tuple[str, float]]] = {}
    for qid in sorted(fragments):
        run = pipeline.run_task2(
            qid,
            fragments[qid],
            by_query.get(qid, {}),
            sem_table=table,
            fusion=fusion,
            run_name=cfg.run_name,
        )
        rankings.update(run.rankings)
    return RunResult(run_name=cfg.run_name, rankings=rankings)


def _retrieve_task3(cfg: ExperimentConfig) -> RunResult:
    store = load_corpus(cfg.corpus, cfg.corpus_layout)
    questions = {doc.id: doc.full_text for doc in load_corpus(cfg.queries, cfg.queries_layout)}
    task_cfg = Task3Config(
        train_topk=cfg.train_topk, infer_topk=cfg.infer_topk, fusion=cfg.fusion_params()
    )
    return pipeline.run_task3(
        store,
        questions,
        sem_table=_load_table(cfg),
        cfg=task_cfg,
        phase=cfg.phase,
        run_name=cfg.run_name,
        jobs=cfg.jobs,
    )


def _cmd_retrieve(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    if cfg.task == "task1":
        run = _retrieve_task1(cfg)
    elif cfg.task == "task2":
        run = _retrieve_task2(cfg)
    elif cfg.task == "task3":
        run = _retrieve_task3(cfg)
    else:
        raise UsageError(f"unknown task {cfg.task!r} (expected task1, task2, or task3)")
    _echo_config(cfg, out_dir)
    pipeline.write_run(run, out_dir / "run.tsv")
    print(f"wrote {sum(len(v) for v in run.rankings.values())} rows -> {out_dir / 'run.tsv'}")
    return EXIT_OK


def _cmd_fuse(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    lex_run = pipeline.read_run(args.lex_run)
    table = semscore.load_score_table(args.sem_table) if args.sem_table else None
    params = cfg.fusion_params()
    rankings: dict[str, list[tuple[str, float]]] = {}
    for qid in sorted(lex_run.rankings):
        lex_vector = lex_run.rankings[qid]
        if not lex_vector:
            rankings[qid] = []
            continue
        sem_vector = semscore.query_slice(table, qid) if table is not None else []
        fused = ensemble.weighted_fuse(lex_vector, sem_vector, params)
        selected = ensemble.trail_select(fused, params.trail_threshold)
        fused_scores = dict(fused)
        rankings[qid] = [(cid, fused_scores[cid]) for cid in selected]
    _echo_config(cfg, out_dir)
    run = RunResult(run_name=cfg.run_name, rankings=rankings)
    pipeline.write_run(run, out_dir / "run.tsv")
    print(f"fused {len(rankings)} queries -> {out_dir / 'run.tsv'}")
    return EXIT_OK


def _cmd_vote(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    runs = [pipeline.read_run(path) for path in args.runs]
    label_runs = [
        {qid: frozenset(cid for cid, _ in pairs) for qid, pairs in run.rankings.items()}
        for run in runs
    ]
    quorum = cfg.quorum if cfg.quorum > 0 else None
    voted = ensemble.majority_vote(label_runs, quorum=quorum)
    threshold = quorum if quorum is not None else len(runs) // 2 + 1
    rankings: dict[str, list[tuple[str, float]]] = {}
    for qid, winners in voted.items():
        counts = {cid: sum(cid in run[qid] for run in label_runs) for cid in winners}
        # a tie-broken label can sit below the quorum; report its real count
        rankings[qid] = sorted(
            ((cid, float(counts[cid])) for cid in winners),
            key=lambda item: (-item[1], item[0]),
        )
        del threshold
    _echo_config(cfg, out_dir)
    run = RunResult(run_name=cfg.run_name, rankings=rankings)
    pipeline.write_run(run, out_dir / "run.tsv")
    print(f"voted over {len(runs)} runs -> {out_dir / 'run.tsv'}")
    return EXIT_OK


def _grid_from_config(args: argparse.Namespace) -> FusionGrid | None:
    axes = {}
    for axis in ("alphas", "betas", "thresholds"):
        raw = getattr(args, axis)
        if raw:
            try:
                axes[axis] = tuple(float(part) for part in raw.split(",") if part.strip())
            except ValueError:
                raise UsageError(f"cannot parse float list for --{axis} from {raw!r}")
    if not axes:
        return None
    default = ensemble.DEFAULT_GRID
    return FusionGrid(
        alphas=axes.get("alphas", default.alphas),
        betas=axes.get("betas", default.betas),
        thresholds=axes.get("thresholds", default.thresholds),
    )


def _cmd_tune(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    gold = evalkit.load_gold(cfg.gold if cfg.gold else args.gold)
    lex_run = pipeline.read_run(args.lex_run)
    table = semscore.load_score_table(args.sem_table) if args.sem_table else None
    dev_queries = sorted(lex_run.rankings)
    lex_scores = lex_run.rankings
    sem_scores = (
        {qid: semscore.query_slice(table, qid) for qid in dev_queries} if table else {}
    )
    search = FusionGridSearch(grid=_grid_from_config(args), objective=cfg.objective)
    search.fit(dev_queries, gold, lex_scores, sem_scores)
    _echo_config(cfg, out_dir)
    ensemble.write_grid_csv(search.results_, search.best_params_, out_dir / "grid.csv")
    winner = {
        "alpha": search.best_params_.alpha,
        "beta": search.best_params_.beta,
        "trail_threshold": search.best_params_.trail_threshold,
        "objective": cfg.objective,
        "objective_value": search.best_score_,
    }
    payload = json.dumps(winner, indent=2, sort_keys=True) + "\n"
    (out_dir / "params.json").write_text(payload, encoding="utf-8")
    print(payload, end="")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    run = pipeline.read_run(args.run)
    gold = evalkit.load_gold(args.gold)
    if args.mode == "micro-f1":
        report = evalkit.micro_prf(run.selections(), gold).to_dict()
    elif args.mode == "macro-f2":
        macro = evalkit.macro_prf2(run.selections(), gold, skip_missing=args.skip_missing)
        report = macro.to_dict()
        if args.csv:
            lines = ["query_id,precision,recall,f2"]
            lines += [
                f"{q.query_id},{q.precision!r},{q.recall!r},{q.f2!r}" for q in macro.per_query
            ]
            Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif args.mode == "recall":
        ks = _parse_ks(args.ks or cfg.ks)
        values = evalkit.recall_at_k(run.rankings, gold, ks)
        report = {"recall_at_k": {str(k): values[k] for k in ks}}
    elif args.mode == "accuracy":
        pred = {qid: frozenset(cids) for qid, cids in run.selections().items()}
        report = {"accuracy": evalkit.accuracy(pred, gold), "queries": len(gold)}
    else:  # pragma: no cover - argparse choices guard this
        raise UsageError(f"unknown eval mode {args.mode!r}")
    payload = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out_dir:
        out_dir = Path(args.out_dir)
        _echo_config(cfg, out_dir)
        (out_dir / "report.json").write_text(payload, encoding="utf-8")
    print(payload, end="")
    return EXIT_OK


def _cmd_build_pairs(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.set or [])
    out_dir = Path(args.out_dir)
    gold = evalkit.load_gold(args.gold)
    retrieved = pipeline.read_run(args.run)
    queries = sorted(retrieved.rankings)
    pairs = pipeline.build_pairs(queries, gold, retrieved, seed=cfg.seed)
    _echo_config(cfg, out_dir)
    pipeline.write_pairs(pairs, out_dir / "pairs.tsv")
    positives = sum(p.label == "positive" for p in pairs)
    print(f"wrote {positives} positives / {len(pairs) - positives} negatives -> {out_dir / 'pairs.tsv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse defaults to exit code 2
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser, out_dir_required: bool = True) -> None:
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override a config key"
    )
    parser.add_argument("--seed", type=int, help="random seed (default 17)")
    parser.add_argument("--jobs", type=int, help="worker parallelism cap")
    if out_dir_required:
        parser.add_argument("--out-dir", required=True, help="output directory")
    else:
        parser.add_argument("--out-dir", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="lawrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("index", help="build and snapshot a BM25 index")
    _add_common(p)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="run task1|task2|task3 retrieval")
    _add_common(p)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("fuse", help="weighted fusion + trail selection over a run")
    p.add_argument("--lex-run", required=True, help="lexical run TSV")
    p.add_argument("--sem-table", help="semantic score table TSV")
    _add_common(p)
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("vote", help="majority vote over run files")
    p.add_argument("--runs", nargs="+", required=True, help="run TSV files")
    _add_common(p)
    p.set_defaults(func=_cmd_vote)

    p = sub.add_parser("tune", help="grid-search fusion parameters on a dev set")
    p.add_argument("--lex-run", required=True, help="dev-set lexical run TSV")
    p.add_argument("--sem-table", help="semantic score table TSV")
    p.add_argument("--gold", help="gold labels JSON")
    p.add_argument("--alphas", help="comma-separated alpha grid")
    p.add_argument("--betas", help="comma-separated beta grid")
    p.add_argument("--thresholds", help="comma-separated trail-threshold grid")
    _add_common(p)
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("eval", help="score a run against gold labels")
    p.add_argument(
        "--mode",
        required=True,
        choices=["micro-f1", "macro-f2", "recall", "accuracy"],
    )
    p.add_argument("--run", required=True, help="run TSV file")
    p.add_argument("--gold", required=True, help="gold labels JSON")
    p.add_argument("--ks", help="comma-separated recall cutoffs")
    p.add_argument("--csv", help="per-query CSV output (macro mode)")
    p.add_argument(
        "--skip-missing",
        action="store_true",
        help="skip gold queries absent from the run instead of zero-scoring",
    )
    _add_common(p, out_dir_required=False)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("build-pairs", help="emit training pairs at a 1:2 label ratio")
    p.add_argument("--run", required=True, help="retrieved run TSV")
    p.add_argument("--gold", required=True, help="gold labels JSON")
    _add_common(p)
    p.set_defaults(func=_cmd_build_pairs)

    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required")
        overrides = list(args.set or [])
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.jobs is not None:
            overrides.append(f"jobs={args.jobs}")
        args.set = overrides
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
