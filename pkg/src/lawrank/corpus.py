"""Corpus loading and pre-processing for case-law and statute texts.

Every raw document passes through a fixed chain before anything else sees
it: clean_text -> segment_paragraphs -> strip_french -> flag_important ->
extract_year.  The resulting CorpusStore is immutable after loading and
safe for any number of concurrent readers.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Cleaning and segmentation patterns
# ---------------------------------------------------------------------------

_CR = re.compile(r"\r\n?")
# runs of >=3 of the same mark (period, comma, hyphen, underscore) -> one mark
_PUNCT_RUN = re.compile(r"([.,_-])\1{2,}")
_MULTI_SPACE = re.compile(r" {2,}")
_MULTI_NEWLINE = re.compile(r"\n{2,}")

# "[12] ..." or "34. ..." at the start of a line opens a new paragraph
_MARKER_LINE = re.compile(r"^\s*(?:\[\d+\]|\d+\.)(?:\s|$)")
_BLANK_LINE = re.compile(r"^\s*$")

# a 4-digit token that is not embedded in a longer digit run
_YEAR_TOKEN = re.compile(r"(?<!\d)\d{4}(?!\d)")
YEAR_MIN = 1800
YEAR_MAX = 2100

# word tokens for the stopword-ratio language heuristic
_WORD = re.compile(r"[^\W_]+", re.UNICODE)

_SUPPRESSED = re.compile(r"\bSUPPRESSED\b")

# candidate heading line: optional roman or arabic ordinal, short title text
_HEADING = re.compile(
    r"^(?:(?P<ordinal>[IVXLCDM]+|\d+)[.)]\s+)?(?P<name>[A-Z][\w ,'&-]*?)[.:]?\s*$"
)
_MAX_HEADING_WORDS = 6
_MAX_HEADING_CHARS = 80

DEFAULT_IMPORTANT_HEADINGS = ("introduction", "background", "conclusion", "decision")

# Fixed function-word lexicons.  Words common to both languages (on, or,
# car, a, plus, son) are deliberately left out of the French list so that
# ordinary English prose never accumulates French hits.
FRENCH_STOPWORDS = frozenset(
    """
    le la les un une des du de au aux et est sont était été être avoir
    il elle ils elles nous vous je tu lui leur leurs ne pas que qui dont où
    ce cette ces se sa ses mais donc même aussi comme alors ainsi
    pour par avec sur sous dans sans chez entre contre selon depuis
    """.split()
)
ENGLISH_STOPWORDS = frozenset(
    """
    the a an and or but of to in on at by for with from as is are was were
    be been that this these those it its he she they them his her their
    not no which who what when where will would shall should may can could
    has have had
    """.split()
)

# minimum fraction of French function words before a paragraph is dropped
FRENCH_RATIO_FLOOR = 0.05


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


class CorpusKind(str, Enum):
    CASE_LAW = "case_law"
    STATUTE = "statute"


class CorpusLayout(str, Enum):
    JSONL = "jsonl"
    COLIEE_TASK1_DIR = "coliee_task1_dir"
    COLIEE_TASK2_DIR = "coliee_task2_dir"
    STATUTE_FILE = "statute_file"


@dataclass(frozen=True)
class RawDocument:
    """A document as read from disk, before any processing."""

    id: str
    body: str
    source_path: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")


@dataclass(frozen=True)
class Paragraph:
    index: int
    text: str
    important: bool = False
    has_suppressed: bool = False


@dataclass
class ProcessedDocument:
    """A cleaned, segmented document with its extracted year."""

    id: str
    paragraphs: list[Paragraph]
    year: int | None = None

    @property
    def full_text(self) -> str:
        return "\n".join(p.text for p in self.paragraphs)

    def important_paragraphs(self) -> list[Paragraph]:
        return [p for p in self.paragraphs if p.important]


@dataclass
class CorpusStore:
    """Immutable id -> document map; iteration is sorted by id."""

    documents: dict[str, ProcessedDocument]
    kind: CorpusKind = CorpusKind.CASE_LAW

    def __iter__(self) -> Iterator[ProcessedDocument]:
        for doc_id in sorted(self.documents):
            yield self.documents[doc_id]

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.documents

    def get(self, doc_id: str) -> ProcessedDocument:
        try:
            return self.documents[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def ids(self) -> list[str]:
        return sorted(self.documents)


# ---------------------------------------------------------------------------
# Pre-processing operations
# ---------------------------------------------------------------------------


def clean_text(raw: str) -> str:
    """Collapse redundant characters while preserving sentence punctuation.

    Runs of two or more spaces become one space, runs of two or more
    newlines become one newline, and runs of three or more of the same
    punctuation mark (period, comma, hyphen, underscore) become a single
    mark.  Leading and trailing whitespace is stripped.  Idempotent.
    """
    text = _CR.sub("\n", raw)
    text = _PUNCT_RUN.sub(r"\1", text)
    text = _MULTI_SPACE.sub(" ", text)
    text = _MULTI_NEWLINE.sub("\n", text)
    return text.strip()


def segment_paragraphs(body: str) -> list[Paragraph]:
    """Split a document body into paragraphs.

    A new paragraph starts at a blank-line boundary or at a line carrying a
    leading marker of the form "[N]" or "N.".  Marker lines stay part of
    the paragraph text.  Fragments that are empty after cleaning are
    dropped; indices are assigned contiguously from 0.
    """
    blocks: list[list[str]] = []
    current: list[str] = []
    for line in body.split("\n"):
        if _BLANK_LINE.match(line):
            if current:
                blocks.append(current)
                current = []
            continue
        if _MARKER_LINE.match(line) and current:
            blocks.append(current)
            current = []
        current.append(line)
    if current:
        blocks.append(current)

    paragraphs: list[Paragraph] = []
    for block in blocks:
        text = clean_text("\n".join(block))
        if text:
            paragraphs.append(Paragraph(index=len(paragraphs), text=text))
    return paragraphs


def _stopword_ratios(text: str) -> tuple[float, float]:
    tokens = _WORD.findall(text.lower())
    if not tokens:
        return 0.0, 0.0
    french = sum(t in FRENCH_STOPWORDS for t in tokens) / len(tokens)
    english = sum(t in ENGLISH_STOPWORDS for t in tokens) / len(tokens)
    return french, english


def is_french(text: str) -> bool:
    """Stopword-ratio heuristic: French beats English and clears the floor."""
    french, english = _stopword_ratios(text)
    return french > english and french >= FRENCH_RATIO_FLOOR


def strip_french(paragraphs: Sequence[Paragraph]) -> list[Paragraph]:
    """Drop French-dominant paragraphs; survivors are re-indexed, text untouched."""
    kept = [p for p in paragraphs if not is_french(p.text)]
    return [replace(p, index=i) for i, p in enumerate(kept)]


def extract_year(doc: ProcessedDocument | str) -> int | None:
    """Most recent plausible year mentioned in the document, if any.

    A year is a standalone 4-digit token within [YEAR_MIN, YEAR_MAX];
    digits embedded in longer runs do not count.
    """
    text = doc if isinstance(doc, str) else doc.full_text
    years = [int(tok) for tok in _YEAR_TOKEN.findall(text)]
    years = [y for y in years if YEAR_MIN <= y <= YEAR_MAX]
    return max(years, default=None)


def _heading_name(line: str) -> str | None:
    """Return the title of a heading-like line, or None.

    Heuristic: short single line, optional roman/arabic ordinal prefix,
    title-cased start.  A plain sentence ending with a period (and no
    ordinal) is not a heading.
    """
    stripped = line.strip()
    if not stripped or len(stripped) > _MAX_HEADING_CHARS:
        return None
    m = _HEADING.match(stripped)
    if not m:
        return None
    name = m.group("name")
    if len(name.split()) > _MAX_HEADING_WORDS:
        return None
    if stripped.endswith(".") and not m.group("ordinal"):
        return None
    return name


def _heading_matches(name: str, wanted: frozenset[str]) -> bool:
    first = name.split()[0].lower()
    return first in wanted or first.removesuffix("s") in wanted


def flag_important(
    paragraphs: Sequence[Paragraph],
    important_headings: Iterable[str] = DEFAULT_IMPORTANT_HEADINGS,
) -> list[Paragraph]:
    """Mark paragraphs that carry weight for retrieval.

    A paragraph is important when it contains the "SUPPRESSED" citation
    placeholder, or when it sits under one of the configured section
    headings (the heading paragraph itself included).  Every paragraph is
    retained.
    """
    wanted = frozenset(h.lower() for h in important_headings)
    in_section = False
    out: list[Paragraph] = []
    for p in paragraphs:
        first_line = p.text.split("\n", 1)[0]
        heading = _heading_name(first_line)
        if heading is not None:
            in_section = _heading_matches(heading, wanted)
        has_suppressed = bool(_SUPPRESSED.search(p.text))
        out.append(
            replace(p, important=has_suppressed or in_section, has_suppressed=has_suppressed)
        )
    return out


def year_filter(
    query: ProcessedDocument, candidates: Iterable[ProcessedDocument]
) -> list[ProcessedDocument]:
    """Drop candidates strictly more recent than the query's year.

    Candidates without a year are kept; a query without a year filters
    nothing.
    """
    if query.year is None:
        return list(candidates)
    return [c for c in candidates if c.year is None or c.year <= query.year]


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def process_document(
    raw: RawDocument,
    *,
    year_override: int | None = None,
    important_headings: Iterable[str] = DEFAULT_IMPORTANT_HEADINGS,
) -> ProcessedDocument:
    """Run the full pre-processing chain on one raw document."""
    paragraphs = segment_paragraphs(clean_text(raw.body))
    paragraphs = strip_french(paragraphs)
    paragraphs = flag_important(paragraphs, important_headings)
    doc = ProcessedDocument(id=raw.id, paragraphs=paragraphs)
    doc.year = year_override if year_override is not None else extract_year(doc)
    if not paragraphs:
        log.warning("document %r has no usable paragraphs after cleaning", raw.id)
    return doc


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _iter_jsonl(path: Path) -> Iterator[tuple[RawDocument, int | None]]:
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise DataError(f"{path}:{lineno}: expected an object per line")
        doc_id = obj.get("id")
        text = obj.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            raise DataError(f"{path}:{lineno}: 'id' must be a non-empty string")
        if not isinstance(text, str):
            raise DataError(f"{path}:{lineno}: 'text' must be a string")
        year = obj.get("year")
        if year is not None and (isinstance(year, bool) or not isinstance(year, int)):
            raise DataError(f"{path}:{lineno}: 'year' must be an integer or null")
        yield RawDocument(id=doc_id, body=text, source_path=str(path)), year


def _iter_task1_dir(path: Path) -> Iterator[tuple[RawDocument, int | None]]:
    for f in sorted(path.glob("*.txt")):
        yield RawDocument(id=f.name, body=_read_text(f), source_path=str(f)), None


def _iter_task2_dir(path: Path) -> Iterator[tuple[RawDocument, int | None]]:
    qdirs = sorted(d for d in path.iterdir() if d.is_dir())
    if not qdirs:
        raise DataError(f"no query directories found in {path}")
    for qdir in qdirs:
        fragment = qdir / "entailed_fragment.txt"
        paragraphs_dir = qdir / "paragraphs"
        if not fragment.is_file():
            raise DataError(f"{qdir}: missing entailed_fragment.txt")
        if not paragraphs_dir.is_dir():
            raise DataError(f"{qdir}: missing paragraphs/ directory")
        rel = f"{qdir.name}/entailed_fragment.txt"
        yield RawDocument(id=rel, body=_read_text(fragment), source_path=str(fragment)), None
        for f in sorted(paragraphs_dir.glob("*.txt")):
            rel = f"{qdir.name}/paragraphs/{f.name}"
            yield RawDocument(id=rel, body=_read_text(f), source_path=str(f)), None


def load_corpus(
    path: str | Path,
    layout: str | CorpusLayout,
    *,
    important_headings: Iterable[str] = DEFAULT_IMPORTANT_HEADINGS,
) -> CorpusStore:
    """Load and pre-process a corpus from one of the supported layouts.

    Deterministic for byte-identical input.  Raises DataError on unreadable
    files, malformed records, duplicate ids, or an empty corpus.
    """
    path = Path(path)
    layout = CorpusLayout(layout)
    if not path.exists():
        raise DataError(f"corpus path does not exist: {path}")

    if layout in (CorpusLayout.JSONL, CorpusLayout.STATUTE_FILE):
        if not path.is_file():
            raise DataError(f"{layout.value} layout expects a file: {path}")
        raws = _iter_jsonl(path)
        kind = CorpusKind.STATUTE if layout is CorpusLayout.STATUTE_FILE else CorpusKind.CASE_LAW
    elif layout is CorpusLayout.COLIEE_TASK1_DIR:
        if not path.is_dir():
            raise DataError(f"{layout.value} layout expects a directory: {path}")
        raws = _iter_task1_dir(path)
        kind = CorpusKind.CASE_LAW
    else:
        if not path.is_dir():
            raise DataError(f"{layout.value} layout expects a directory: {path}")
        raws = _iter_task2_dir(path)
        kind = CorpusKind.CASE_LAW

    documents: dict[str, ProcessedDocument] = {}
    for raw, year in raws:
        if raw.id in documents:
            raise DataError(f"duplicate document id {raw.id!r} in {path}")
        documents[raw.id] = process_document(
            raw, year_override=year, important_headings=important_headings
        )
    if not documents:
        raise DataError(f"no documents found in {path}")
    return CorpusStore(documents=documents, kind=kind)
