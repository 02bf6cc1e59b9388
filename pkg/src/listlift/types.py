"""Value types for candidate lists, model parameters, and configuration.

All numeric payloads are 64-bit floats.  Instances are immutable after
construction (ndarrays are marked read-only) and safe to share across
threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ShapeError, ValidationError


def _frozen(arr) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ReviewItem:
    """One ranking candidate: embedding, base pointwise score, utility label."""

    id: str
    embedding: np.ndarray
    point_score: float
    label: float
    text: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "embedding", _frozen(self.embedding))
        object.__setattr__(self, "point_score", float(self.point_score))
        object.__setattr__(self, "label", float(self.label))


@dataclass(frozen=True)
class CandidateList:
    """One group's set of candidates, order-agnostic, all of dimension ``dim``."""

    group_id: str
    items: tuple[ReviewItem, ...]
    dim: int
    query: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "dim", int(self.dim))

    def __len__(self) -> int:
        return len(self.items)

    def embedding_matrix(self) -> np.ndarray:
        """Stack item embeddings into an (N, dim) float64 matrix."""
        return np.stack([it.embedding for it in self.items]).astype(np.float64)

    def point_scores(self) -> np.ndarray:
        return np.array([it.point_score for it in self.items], dtype=np.float64)

    def labels(self) -> np.ndarray:
        return np.array([it.label for it in self.items], dtype=np.float64)


def validate_list(lst: CandidateList) -> None:
    """Check all CandidateList invariants, raising ValidationError on the first violation.

    Violations: empty-list, duplicate-id, dimension-mismatch, non-finite-value.
    """
    if len(lst.items) < 1:
        raise ValidationError(f"list {lst.group_id!r} has no items", code="empty-list")
    seen = set()
    for it in lst.items:
        if it.id in seen:
            raise ValidationError(
                f"list {lst.group_id!r} has duplicate item id {it.id!r}",
                code="duplicate-id",
            )
        seen.add(it.id)
        if it.embedding.ndim != 1 or it.embedding.shape[0] != lst.dim:
            raise ValidationError(
                f"item {it.id!r} embedding length {it.embedding.shape} != dim {lst.dim}",
                code="dimension-mismatch",
            )
        if not np.all(np.isfinite(it.embedding)):
            raise ValidationError(
                f"item {it.id!r} embedding has non-finite entries",
                code="non-finite-value",
            )
        if not (math.isfinite(it.point_score) and math.isfinite(it.label)):
            raise ValidationError(
                f"item {it.id!r} has non-finite score or label",
                code="non-finite-value",
            )


# Tensor fields of ModelParams in their canonical (checkpoint) order.
# alpha is kept separate: it is a scalar with its own update rules.
PARAM_TENSOR_FIELDS = (
    "w_q", "w_k", "w_v", "w_o", "ln_scale", "ln_shift", "w1", "b1", "w2", "b2",
)


@dataclass(frozen=True)
class ModelParams:
    """All learnable tensors of the residual list-context head.

    Attention projections are stored per head: ``w_q``/``w_k``/``w_v`` have
    shape (head_count, d, d_head) with d_head = d // head_count, and the
    shared output projection ``w_o`` is (d, d).  The per-item MLP is
    d -> d -> 1 with ReLU.  ``alpha`` gates the residual correction added
    to the pointwise scores.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    ln_scale: np.ndarray
    ln_shift: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    alpha: float

    def __post_init__(self):
        for name in PARAM_TENSOR_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not math.isfinite(self.alpha):
            raise ValidationError("alpha is not finite", code="non-finite-value")

    @property
    def head_count(self) -> int:
        return self.w_q.shape[0]

    @property
    def d(self) -> int:
        return self.w_q.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Named tensors in canonical order (alpha excluded)."""
        return {name: getattr(self, name) for name in PARAM_TENSOR_FIELDS}

    def replace(self, **kwargs) -> "ModelParams":
        return replace(self, **kwargs)


def init_params(d: int, head_count: int, seed: int) -> ModelParams:
    """Deterministically initialize a head for embedding dimension ``d``.

    alpha starts at exactly 0 so a fresh model reproduces the pointwise
    ranking; projection and MLP weights are seeded uniform on
    [-1/sqrt(d), 1/sqrt(d)] (draw order: w_q, w_k, w_v, w_o, w1, w2),
    biases are zero, and the norm affine is the identity.
    """
    if d < 1 or head_count < 1:
        raise ShapeError(f"d={d} and head_count={head_count} must be positive")
    if d % head_count != 0:
        raise ShapeError(
            f"d={d} is not divisible by head_count={head_count}",
            code="indivisible-heads",
        )
    d_head = d // head_count
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        w_q=draw(head_count, d, d_head),
        w_k=draw(head_count, d, d_head),
        w_v=draw(head_count, d, d_head),
        w_o=draw(d, d),
        ln_scale=np.ones(d),
        ln_shift=np.zeros(d),
        w1=draw(d, d),
        b1=np.zeros(d),
        w2=draw(d),
        b2=np.zeros(1),
        alpha=0.0,
    )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for fitting the residual head."""

    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    epochs: int = 3
    head_count: int = 4
    seed: int = 0
    k_min: int = 2
    k_max: int = 50
    lists_per_batch: int = 1
    folds: int = 10
    eval_cutoffs: tuple[int, ...] = (1, 3, 10)
    normalize_pairs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "eval_cutoffs", tuple(sorted(set(int(k) for k in self.eval_cutoffs))))
        if not (1 <= self.k_min <= self.k_max):
            raise ValidationError(f"need 1 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if self.folds < 2:
            raise ValidationError(f"folds must be >= 2, got {self.folds}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lists_per_batch < 1:
            raise ValidationError(f"lists_per_batch must be >= 1, got {self.lists_per_batch}")
        if any(k < 1 for k in self.eval_cutoffs):
            raise ValidationError(f"eval cutoffs must be >= 1, got {self.eval_cutoffs}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in data.items() if k in known}
        if "eval_cutoffs" in kwargs:
            kwargs["eval_cutoffs"] = tuple(kwargs["eval_cutoffs"])
        return cls(**kwargs)


@dataclass(frozen=True)
class EvalReport:
    """Metric values per list plus their aggregate means.

    ``per_list`` maps group id to a {metric name: value} map.  Aggregates
    are means over the lists where the metric is defined (rank correlations
    are undefined for lists whose labels or scores are all tied; such lists
    are skipped for that metric only).
    """

    per_list: dict[str, dict[str, float]]
    aggregates: dict[str, float]
    list_count: int = field(default=0)

    def __post_init__(self):
        if self.list_count == 0:
            object.__setattr__(self, "list_count", len(self.per_list))

    def to_dict(self) -> dict:
        return {
            "list_count": self.list_count,
            "aggregates": dict(self.aggregates),
            "per_list": {g: dict(m) for g, m in self.per_list.items()},
        }
