"""Okapi BM25 inverted index with an sklearn-style estimator interface.

The index is built once with fit() and is immutable afterwards; searches
are lock-free and safe to run concurrently.  The idf variant is the
Lucene-compatible ln(1 + (N - df + 0.5) / (df + 0.5)), which is never
negative.
"""

from __future__ import annotations

import math
import re
import struct
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import CorpusStore
from .errors import DataError

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

UNIT_DOCUMENT = "document"
UNIT_PARAGRAPH = "paragraph"

_SNAPSHOT_MAGIC = b"BMIX"
_SNAPSHOT_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every non-alphanumeric character.

    Digit-only tokens are kept; there is no stemming or stopword removal.
    """
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    """k1 controls term-frequency saturation, b length normalization."""

    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 < 0:
            raise ValueError(f"k1 must be >= 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must be in [0, 1], got {self.b}")


@dataclass(frozen=True)
class ScoredCandidate:
    query_id: str
    candidate_id: str
    score: float
    origin: str = "lexical"  # lexical | semantic | fused


class Bm25Index(BaseEstimator):
    """Inverted index over a corpus at document or paragraph granularity.

    Parameters
    ----------
    unit : "document" or "paragraph"
        Indexing granularity.  Paragraph units get ids "<doc_id>#<index>".
    k1, b : float
        Okapi BM25 constants.
    analyzer : callable or None
        Text -> token list override; defaults to :func:`tokenize`.

    Fitted attributes: ``postings_`` (term -> sorted (unit_id, tf) list),
    ``doc_len_``, ``df_``, ``n_units_``, ``avg_len_``.
    """

    def __init__(
        self,
        unit: str = UNIT_DOCUMENT,
        k1: float = 1.2,
        b: float = 0.75,
        analyzer: Callable[[str], list[str]] | None = None,
    ):
        self.unit = unit
        self.k1 = k1
        self.b = b
        self.analyzer = analyzer

    # -- construction -------------------------------------------------------

    def _unit_texts(self, store: CorpusStore | Mapping[str, str]) -> list[tuple[str, str]]:
        if isinstance(store, CorpusStore):
            if self.unit == UNIT_DOCUMENT:
                return [(doc.id, doc.full_text) for doc in store]
            return [
                (f"{doc.id}#{p.index}", p.text) for doc in store for p in doc.paragraphs
            ]
        # plain mapping of unit_id -> text; granularity is the caller's business
        return sorted(store.items())

    def fit(self, store: CorpusStore | Mapping[str, str], y=None) -> "Bm25Index":
        """Build postings and statistics from a corpus store or id->text map."""
        Bm25Params(self.k1, self.b)
        if self.unit not in (UNIT_DOCUMENT, UNIT_PARAGRAPH):
            raise ValueError(f"unknown index unit {self.unit!r}")
        units = self._unit_texts(store)
        if not units:
            raise ValueError("cannot build an index over an empty store")
        analyzer = self.analyzer or tokenize

        postings: dict[str, list[tuple[str, int]]] = {}
        doc_len: dict[str, int] = {}
        for unit_id, text in units:
            tokens = analyzer(text)
            doc_len[unit_id] = len(tokens)
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((unit_id, tf))
        for plist in postings.values():
            plist.sort()

        self.postings_ = postings
        self.doc_len_ = doc_len
        self.n_units_ = len(units)
        self.avg_len_ = sum(doc_len.values()) / len(units)
        self.df_ = {term: len(plist) for term, plist in postings.items()}
        return self

    # -- scoring ------------------------------------------------------------

    def _idf(self, term: str) -> float:
        df = self.df_[term]
        return math.log(1 + (self.n_units_ - df + 0.5) / (df + 0.5))

    def _length_norm(self, unit_id: str) -> float:
        return self.k1 * (1 - self.b + self.b * self.doc_len_[unit_id] / self.avg_len_)

    def score(self, query_terms: Iterable[str], unit_id: str) -> float:
        """BM25 score of one unit for a bag of query terms.

        Sums over distinct query terms; terms absent from the index
        contribute nothing.  Raises KeyError for an unknown unit_id.
        """
        check_is_fitted(self, "postings_")
        if unit_id not in self.doc_len_:
            raise KeyError(f"unknown unit id {unit_id!r}")
        norm = self._length_norm(unit_id)
        total = 0.0
        for term in dict.fromkeys(query_terms):
            plist = self.postings_.get(term)
            if plist is None:
                continue
            i = bisect_left(plist, (unit_id,))
            if i == len(plist) or plist[i][0] != unit_id:
                continue
            tf = plist[i][1]
            total += self._idf(term) * (tf * (self.k1 + 1)) / (tf + norm)
        return total

    def search(self, query_text: str, k: int, query_id: str = "") -> list[ScoredCandidate]:
        """Top-k units by BM25 score, ties broken by ascending unit id.

        Only units with score > 0 are returned, so fewer than k results is
        possible.
        """
        check_is_fitted(self, "postings_")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        analyzer = self.analyzer or tokenize
        acc: dict[str, float] = {}
        for term in dict.fromkeys(analyzer(query_text)):
            plist = self.postings_.get(term)
            if plist is None:
                continue
            idf = self._idf(term)
            for unit_id, tf in plist:
                contribution = idf * (tf * (self.k1 + 1)) / (tf + self._length_norm(unit_id))
                acc[unit_id] = acc.get(unit_id, 0.0) + contribution
        ranked = sorted(
            ((uid, s) for uid, s in acc.items() if s > 0.0),
            key=lambda item: (-item[1], item[0]),
        )
        return [
            ScoredCandidate(query_id=query_id, candidate_id=uid, score=s)
            for uid, s in ranked[:k]
        ]

    # -- snapshot ------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write a versioned binary snapshot; round-trips bit-exactly."""
        check_is_fitted(self, "postings_")
        if self.analyzer is not None:
            raise ValueError("an index with a custom analyzer cannot be snapshotted")
        buf = bytearray()
        buf += _SNAPSHOT_MAGIC
        buf += struct.pack("<HB", _SNAPSHOT_VERSION, 0 if self.unit == UNIT_DOCUMENT else 1)
        buf += struct.pack("<ddId", self.k1, self.b, self.n_units_, self.avg_len_)

        unit_ids = sorted(self.doc_len_)
        unit_pos = {uid: i for i, uid in enumerate(unit_ids)}
        for uid in unit_ids:
            raw = uid.encode("utf-8")
            buf += struct.pack("<I", len(raw)) + raw + struct.pack("<I", self.doc_len_[uid])

        buf += struct.pack("<I", len(self.postings_))
        for term in sorted(self.postings_):
            raw = term.encode("utf-8")
            plist = self.postings_[term]
            buf += struct.pack("<I", len(raw)) + raw + struct.pack("<I", len(plist))
            for uid, tf in plist:
                buf += struct.pack("<II", unit_pos[uid], tf)
        Path(path).write_bytes(bytes(buf))

    @classmethod
    def load(cls, path: str | Path) -> "Bm25Index":
        """Reconstruct an index from a snapshot written by :meth:`save`."""
        data = Path(path).read_bytes()
        view = memoryview(data)
        if data[:4] != _SNAPSHOT_MAGIC:
            raise DataError(f"{path}: not an index snapshot")
        offset = 4
        version, unit_code = struct.unpack_from("<HB", view, offset)
        offset += struct.calcsize("<HB")
        if version != _SNAPSHOT_VERSION:
            raise DataError(f"{path}: unsupported snapshot version {version}")
        k1, b, n_units, avg_len = struct.unpack_from("<ddId", view, offset)
        offset += struct.calcsize("<ddId")

        unit_ids: list[str] = []
        doc_len: dict[str, int] = {}
        for _ in range(n_units):
            (id_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            uid = bytes(view[offset : offset + id_len]).decode("utf-8")
            offset += id_len
            (length,) = struct.unpack_from("<I", view, offset)
            offset += 4
            unit_ids.append(uid)
            doc_len[uid] = length

        (n_terms,) = struct.unpack_from("<I", view, offset)
        offset += 4
        postings: dict[str, list[tuple[str, int]]] = {}
        for _ in range(n_terms):
            (term_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            term = bytes(view[offset : offset + term_len]).decode("utf-8")
            offset += term_len
            (df,) = struct.unpack_from("<I", view, offset)
            offset += 4
            plist = []
            for _ in range(df):
                pos, tf = struct.unpack_from("<II", view, offset)
                offset += 8
                plist.append((unit_ids[pos], tf))
            postings[term] = plist

        index = cls(unit=UNIT_DOCUMENT if unit_code == 0 else UNIT_PARAGRAPH, k1=k1, b=b)
        index.postings_ = postings
        index.doc_len_ = doc_len
        index.n_units_ = n_units
        index.avg_len_ = avg_len
        index.df_ = {term: len(plist) for term, plist in postings.items()}
        return index


# ---------------------------------------------------------------------------
# Function-level surface
# ---------------------------------------------------------------------------


def build_index(
    store: CorpusStore | Mapping[str, str],
    unit: str = UNIT_DOCUMENT,
    params: Bm25Params | None = None,
) -> Bm25Index:
    params = params or Bm25Params()
    return Bm25Index(unit=unit, k1=params.k1, b=params.b).fit(store)


def bm25_score(index: Bm25Index, query_terms: Iterable[str], unit_id: str) -> float:
    return index.score(query_terms, unit_id)


def search_topk(
    index: Bm25Index, query_text: str, k: int, query_id: str = ""
) -> list[ScoredCandidate]:
    return index.search(query_text, k, query_id=query_id)
