"""Reference scorers: Okapi BM25 over review text and the identity pointwise ranker.

BM25 uses k1=1.2, b=0.75 and the idf variant ln(1 + (N - df + 0.5)/(df + 0.5)),
which is non-negative for every term.  Corpus statistics are built per
candidate list: each group's texts form their own corpus, matching the
per-group ranking task.  The query is the list's query field.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .metrics import compute_ranks
from .types import CandidateList

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

BM25_K1 = 1.2
BM25_B = 0.75


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric codepoint; drops empties."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class CorpusStats:
    """Document count, per-term document frequencies, and mean token length."""

    n_docs: int
    doc_freq: dict[str, int]
    avg_len: float


def build_corpus_stats(docs_tokens: list[list[str]]) -> CorpusStats:
    """Collect BM25 statistics over a tokenized corpus."""
    if not docs_tokens:
        raise DegenerateInputError("cannot build statistics for an empty corpus",
                                   code="empty-corpus")
    doc_freq: dict[str, int] = {}
    total = 0
    for tokens in docs_tokens:
        total += len(tokens)
        for term in set(tokens):
            doc_freq[term] = doc_freq.get(term, 0) + 1
    return CorpusStats(n_docs=len(docs_tokens), doc_freq=doc_freq, avg_len=total / len(docs_tokens))


def bm25_score(
    query_tokens: list[str],
    doc_tokens: list[str],
    stats: CorpusStats,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    """Okapi BM25 score of one document against a tokenized query."""
    if stats.n_docs < 1:
        raise DegenerateInputError("corpus has no documents", code="empty-corpus")
    counts: dict[str, int] = {}
    for term in doc_tokens:
        counts[term] = counts.get(term, 0) + 1
    length_ratio = len(doc_tokens) / stats.avg_len if stats.avg_len > 0 else 0.0
    score = 0.0
    for term in query_tokens:
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        df = stats.doc_freq.get(term, 0)
        idf = math.log(1.0 + (stats.n_docs - df + 0.5) / (df + 0.5))
        score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * length_ratio))
    return score


def bm25_scores_for_list(lst: CandidateList, k1: float = BM25_K1, b: float = BM25_B) -> np.ndarray:
    """BM25 scores of every item against the list's query.

    The list's own texts form the corpus; lists without a query or with
    items lacking text cannot be scored.
    """
    if lst.query is None:
        raise ValidationError(
            f"list {lst.group_id!r} has no query text for BM25", code="missing-text"
        )
    if any(it.text is None for it in lst.items):
        raise ValidationError(
            f"list {lst.group_id!r} has items without text; BM25 needs text",
            code="missing-text",
        )
    docs = [tokenize(it.text) for it in lst.items]
    stats = build_corpus_stats(docs)
    query = tokenize(lst.query)
    return np.array([bm25_score(query, doc, stats, k1=k1, b=b) for doc in docs])


def rank_bm25(lst: CandidateList) -> np.ndarray:
    """1-indexed ranks of the list's items under BM25."""
    return compute_ranks(bm25_scores_for_list(lst))


def rank_pointwise(lst: CandidateList) -> np.ndarray:
    """1-indexed ranks of the list's items under their stored point scores."""
    return compute_ranks(lst.point_scores())
