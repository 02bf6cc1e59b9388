"""Ranking-quality and rank-agreement metrics.

Conventions used throughout:

* Rankings are produced by sorting scores descending with ties broken by
  ascending original index, so every rank vector is a permutation of 1..N.
* NDCG@k truncates both DCG and IDCG at k and is defined as 1.0 when the
  ideal DCG is zero (a list with no utility cannot be mis-ranked).
* Spearman uses fractional (average) ranks for ties, Kendall is the tau-b
  variant, and pairwise accuracy credits a tied score pair with 0.5.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .types import CandidateList, EvalReport

MAX_GAIN_LABEL = 64.0  # 2**64 - 1 is still exact-ish in float64; beyond is an input bug

GainFn = Callable[[np.ndarray], np.ndarray]


def gain(y) -> float | np.ndarray:
    """Exponential utility gain 2**y - 1."""
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("labels must be finite", code="label-out-of-range")
    if np.any(arr > MAX_GAIN_LABEL):
        raise ValidationError(
            f"label exceeds {MAX_GAIN_LABEL}; exponential gain would overflow",
            code="label-out-of-range",
        )
    out = np.exp2(arr) - 1.0
    return float(out) if np.isscalar(y) or arr.ndim == 0 else out


def linear_gain(y) -> float | np.ndarray:
    """Identity gain, exposed as the alternative to the exponential default."""
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("labels must be finite", code="label-out-of-range")
    return float(arr) if np.isscalar(y) or arr.ndim == 0 else arr


def disc(k) -> float | np.ndarray:
    """Logarithmic position discount 1 / log2(k + 1) for 1-indexed rank k."""
    arr = np.asarray(k, dtype=np.float64)
    if np.any(arr < 1):
        raise ValidationError(f"rank must be >= 1, got {k}", code="invalid-rank")
    out = 1.0 / np.log2(arr + 1.0)
    return float(out) if np.isscalar(k) or arr.ndim == 0 else out


def compute_ranks(scores) -> np.ndarray:
    """1-indexed ranks under descending sort with index tie-breaking.

    ranks[i] is the position item i takes when scores are sorted descending;
    equal scores keep their original relative order, so the output is always
    a permutation of 1..N.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValidationError(f"scores must be 1-d, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite", code="non-finite-score")
    order = np.argsort(-s, kind="stable")
    ranks = np.empty(len(s), dtype=np.int64)
    ranks[order] = np.arange(1, len(s) + 1)
    return ranks


def _descending_order(scores: np.ndarray) -> np.ndarray:
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def dcg_at_k(scores, labels, k: int, gain_fn: GainFn = gain) -> float:
    """Discounted cumulative gain of the score-induced ranking, truncated at k."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError(
            f"scores and labels differ in length: {s.shape} vs {y.shape}",
            code="length-mismatch",
        )
    if k < 1:
        raise ValidationError(f"cutoff must be >= 1, got {k}", code="invalid-rank")
    top = _descending_order(s)[: min(k, len(s))]
    positions = np.arange(1, len(top) + 1)
    return float(np.sum(np.asarray(gain_fn(y[top])) * disc(positions)))


def idcg(labels, k: int, gain_fn: GainFn = gain) -> float:
    """Ideal DCG: gains of labels sorted descending, discounted, truncated at k."""
    y = np.asarray(labels, dtype=np.float64)
    if k < 1:
        raise ValidationError(f"cutoff must be >= 1, got {k}", code="invalid-rank")
    top = np.sort(np.asarray(gain_fn(y)))[::-1][: min(k, len(y))]
    positions = np.arange(1, len(top) + 1)
    return float(np.sum(top * disc(positions)))


def ndcg_at_k(scores, labels, k: int, gain_fn: GainFn = gain) -> float:
    """Normalized DCG at cutoff k; 1.0 by convention when the ideal DCG is 0."""
    ideal = idcg(labels, k, gain_fn=gain_fn)
    if ideal == 0.0:
        return 1.0
    return dcg_at_k(scores, labels, k, gain_fn=gain_fn) / ideal


def fractional_ranks(values) -> np.ndarray:
    """Ascending 1-indexed ranks with ties assigned their group average."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=np.float64)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i..j (0-indexed) share the average rank
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def spearman_rho(scores, labels) -> float:
    """Rank correlation: Pearson correlation of the two fractional-rank vectors."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError("scores and labels differ in length", code="length-mismatch")
    if len(s) < 2:
        raise DegenerateInputError("need at least 2 items for rank correlation")
    rs = fractional_ranks(s)
    ry = fractional_ranks(y)
    rs_c = rs - rs.mean()
    ry_c = ry - ry.mean()
    denom = math.sqrt(float(np.dot(rs_c, rs_c)) * float(np.dot(ry_c, ry_c)))
    if denom == 0.0:
        raise DegenerateInputError("all ranks tied in one sequence; correlation undefined")
    return float(np.dot(rs_c, ry_c)) / denom


def kendall_tau(scores, labels) -> float:
    """Kendall tau-b: tie-adjusted concordant-minus-discordant pair fraction."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError("scores and labels differ in length", code="length-mismatch")
    n = len(s)
    if n < 2:
        raise DegenerateInputError("need at least 2 items for rank correlation")
    ds = np.sign(s[:, None] - s[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    prod = ds[iu] * dy[iu]
    concordant = int(np.sum(prod > 0))
    discordant = int(np.sum(prod < 0))
    ties_s = int(np.sum(ds[iu] == 0))
    ties_y = int(np.sum(dy[iu] == 0))
    total = n * (n - 1) // 2
    denom = math.sqrt(float(total - ties_s) * float(total - ties_y))
    if denom == 0.0:
        raise DegenerateInputError("all values tied in one sequence; tau-b undefined")
    return (concordant - discordant) / denom


def pairwise_accuracy(scores, labels) -> float:
    """Fraction of label-distinct pairs ordered correctly; score ties count 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValidationError("scores and labels differ in length", code="length-mismatch")
    n = len(s)
    iu = np.triu_indices(n, k=1)
    dy = np.sign(y[:, None] - y[None, :])[iu]
    ds = np.sign(s[:, None] - s[None, :])[iu]
    valid = dy != 0
    n_valid = int(np.sum(valid))
    if n_valid == 0:
        raise DegenerateInputError("no pair with distinct labels", code="no-valid-pairs")
    agree = np.where(ds[valid] == 0, 0.5, (ds[valid] == dy[valid]).astype(np.float64))
    return float(np.sum(agree)) / n_valid


def list_metrics(
    scores,
    labels,
    cutoffs: Iterable[int] = (1, 3, 10),
    gain_fn: GainFn = gain,
) -> dict[str, float]:
    """All per-list metrics for one (scores, labels) pair.

    Correlation metrics that are undefined for the list (all labels tied,
    all scores tied, or a single item) are simply omitted from the map.
    """
    out: dict[str, float] = {}
    for k in cutoffs:
        out[f"ndcg@{k}"] = ndcg_at_k(scores, labels, k, gain_fn=gain_fn)
    for name, fn in (
        ("spearman", spearman_rho),
        ("kendall", kendall_tau),
        ("pairwise_accuracy", pairwise_accuracy),
    ):
        try:
            out[name] = fn(scores, labels)
        except DegenerateInputError:
            pass
    return out


def evaluate_dataset(
    dataset: Iterable[CandidateList],
    score_fn: Callable[[CandidateList], np.ndarray],
    cutoffs: Iterable[int] = (1, 3, 10),
    gain_fn: GainFn = gain,
) -> EvalReport:
    """Score every list with ``score_fn`` and aggregate per-list metrics.

    Aggregate values are means over the lists where each metric is defined.
    """
    cutoffs = tuple(cutoffs)
    per_list: dict[str, dict[str, float]] = {}
    for lst in dataset:
        scores = np.asarray(score_fn(lst), dtype=np.float64)
        per_list[lst.group_id] = list_metrics(scores, lst.labels(), cutoffs, gain_fn=gain_fn)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for m in per_list.values():
        for name, value in m.items():
            sums[name] = sums.get(name, 0.0) + value
            counts[name] = counts.get(name, 0) + 1
    aggregates = {name: sums[name] / counts[name] for name in sums}
    return EvalReport(per_list=per_list, aggregates=aggregates, list_count=len(per_list))
