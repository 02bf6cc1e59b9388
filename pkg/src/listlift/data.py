"""Dataset persistence, checkpointing, and synthetic data with a known oracle.

Datasets are UTF-8 JSON-lines files, one candidate list per line, so large
collections stream without whole-file parsing.  Floats serialize through
Python's shortest-round-trip repr, which preserves 64-bit values exactly.
Checkpoints are a small binary format: a versioned header (magic, format
version, dimension, head count), a JSON metadata blob, then every tensor
as raw little-endian float64 in a fixed documented order.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointFormatError, DatasetFormatError, ValidationError
from .metrics import evaluate_dataset
from .training import OptimizerState
from .types import (
    PARAM_TENSOR_FIELDS,
    CandidateList,
    EvalReport,
    ModelParams,
    ReviewItem,
    validate_list,
)

logger = logging.getLogger("listlift")

_KNOWN_LIST_FIELDS = {"group_id", "query", "dim", "items"}
_KNOWN_ITEM_FIELDS = {"id", "text", "embedding", "point_score", "label"}

CHECKPOINT_MAGIC = b"LLIFTCKP"
CHECKPOINT_VERSION = 1

# Scale of the isotropic jitter added to cluster directions before
# re-normalizing; small enough that cluster identity stays recoverable.
JITTER_SCALE = 0.1


# ---------------------------------------------------------------------------
# JSONL datasets
# ---------------------------------------------------------------------------

def _list_to_record(lst: CandidateList) -> dict:
    rec = {"group_id": lst.group_id, "dim": lst.dim}
    if lst.query is not None:
        rec["query"] = lst.query
    rec["items"] = []
    for it in lst.items:
        item = {
            "id": it.id,
            "embedding": [float(x) for x in it.embedding],
            "point_score": it.point_score,
            "label": it.label,
        }
        if it.text is not None:
            item["text"] = it.text
        rec["items"].append(item)
    return rec


def _record_to_list(rec: dict, line_no: int) -> CandidateList:
    unknown = set(rec) - _KNOWN_LIST_FIELDS
    if unknown:
        logger.warning("line %d: ignoring unknown fields %s", line_no, sorted(unknown))
    try:
        items = []
        for raw in rec["items"]:
            extra = set(raw) - _KNOWN_ITEM_FIELDS
            if extra:
                logger.warning("line %d: ignoring unknown item fields %s", line_no, sorted(extra))
            items.append(ReviewItem(
                id=str(raw["id"]),
                embedding=np.asarray(raw["embedding"], dtype=np.float64),
                point_score=float(raw["point_score"]),
                label=float(raw["label"]),
                text=raw.get("text"),
            ))
        return CandidateList(
            group_id=str(rec["group_id"]),
            items=tuple(items),
            dim=int(rec["dim"]),
            query=rec.get("query"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(
            f"line {line_no}: malformed record ({exc})", line=line_no
        ) from exc


def save_dataset(dataset, path) -> None:
    """Write one JSON record per candidate list."""
    with open(path, "w", encoding="utf-8") as fh:
        for lst in dataset:
            fh.write(json.dumps(_list_to_record(lst)) + "\n")


def load_dataset(path) -> list[CandidateList]:
    """Parse and validate a JSONL dataset; failures name the offending line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(
                    f"line {line_no}: invalid JSON ({exc.msg})", line=line_no
                ) from exc
            lst = _record_to_list(rec, line_no)
            try:
                validate_list(lst)
            except ValidationError as exc:
                raise DatasetFormatError(
                    f"line {line_no}: {exc} [{exc.code}]",
                    line=line_no,
                    code="validation-error",
                ) from exc
            out.append(lst)
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Checkpoint:
    """A loaded checkpoint: params plus metadata and optional optimizer state."""

    version: int
    params: ModelParams
    meta: dict
    opt_state: OptimizerState | None = None


def _param_shapes(d: int, head_count: int) -> dict[str, tuple]:
    d_head = d // head_count
    return {
        "w_q": (head_count, d, d_head),
        "w_k": (head_count, d, d_head),
        "w_v": (head_count, d, d_head),
        "w_o": (d, d),
        "ln_scale": (d,),
        "ln_shift": (d,),
        "w1": (d, d),
        "b1": (d,),
        "w2": (d,),
        "b2": (1,),
    }


def save_checkpoint(params: ModelParams, meta: dict, path, opt_state: OptimizerState | None = None) -> None:
    """Binary round-trip-exact serialization of params (+ optional optimizer state).

    Layout: magic, uint32 version, uint32 d, uint32 head_count, uint32 flags
    (bit 0: optimizer state present), uint32 metadata length, metadata JSON,
    float64 alpha, then tensors in canonical order as little-endian float64;
    the optimizer state appends uint64 step and the alpha/tensor moments in
    the same order (first moments, then second moments).
    """
    meta_bytes = json.dumps(meta).encode("utf-8")
    flags = 1 if opt_state is not None else 0
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIII", CHECKPOINT_VERSION, params.d, params.head_count, flags))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<d", params.alpha))
        for name in PARAM_TENSOR_FIELDS:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
        if opt_state is not None:
            fh.write(struct.pack("<Q", opt_state.step))
            for moments in (opt_state.m, opt_state.v):
                fh.write(struct.pack("<d", float(moments["alpha"])))
                for name in PARAM_TENSOR_FIELDS:
                    fh.write(np.ascontiguousarray(moments[name], dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint; truncation or version drift raises, never partial params."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"not a checkpoint file (magic {magic!r})")
        version, d, head_count, flags = struct.unpack("<IIII", _read_exact(fh, 16, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(
                f"unsupported checkpoint version {version}", code="version-mismatch"
            )
        if head_count < 1 or d < 1 or d % head_count != 0:
            raise CheckpointFormatError(f"invalid header: d={d}, head_count={head_count}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "metadata length"))
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        (alpha,) = struct.unpack("<d", _read_exact(fh, 8, "alpha"))

        def read_tensors(label):
            tensors = {}
            for name, shape in _param_shapes(d, head_count).items():
                count = int(np.prod(shape))
                raw = _read_exact(fh, count * 8, f"{label} {name}")
                tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            return tensors

        params = ModelParams(alpha=alpha, **read_tensors("tensor"))
        opt_state = None
        if flags & 1:
            (step,) = struct.unpack("<Q", _read_exact(fh, 8, "optimizer step"))
            moments = []
            for label in ("first moment", "second moment"):
                (m_alpha,) = struct.unpack("<d", _read_exact(fh, 8, f"{label} alpha"))
                tensors = read_tensors(label)
                tensors["alpha"] = m_alpha
                moments.append(tensors)
            opt_state = OptimizerState(m=moments[0], v=moments[1], step=step)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointFormatError("trailing bytes after checkpoint payload")
    return Checkpoint(version=version, params=params, meta=meta, opt_state=opt_state)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings for lists with planted list-level effects.

    Items cluster in embedding space; the label of an item decays
    geometrically (factor ``redundancy_decay``) with its utility rank
    inside its own cluster, so repeats of an idea lose utility.  The point
    score sees only the item's intrinsic utility, capped at
    ``compression_cap`` and perturbed with Gaussian noise — blind to
    redundancy and compressed at the top, the two pointwise failure modes
    the residual head is meant to correct.
    """

    groups: int = 200
    items_per_group: int = 30
    dim: int = 16
    clusters_per_group: int = 4
    redundancy_decay: float = 0.6
    score_noise: float = 0.3
    compression_cap: float = 8.0
    seed: int = 42

    def __post_init__(self):
        if self.groups < 1 or self.items_per_group < 1 or self.dim < 1:
            raise ValidationError("groups, items_per_group, and dim must be positive",
                                  code="invalid-config")
        if not (1 <= self.clusters_per_group <= self.items_per_group):
            raise ValidationError(
                f"clusters_per_group must be in [1, items_per_group], got {self.clusters_per_group}",
                code="invalid-config",
            )
        if not (0.0 < self.redundancy_decay < 1.0):
            raise ValidationError(
                f"redundancy_decay must be in (0, 1), got {self.redundancy_decay}",
                code="invalid-config",
            )
        if self.score_noise < 0 or not math.isfinite(self.score_noise):
            raise ValidationError("score_noise must be >= 0", code="invalid-config")

    def to_dict(self) -> dict:
        return {
            "groups": self.groups,
            "items_per_group": self.items_per_group,
            "dim": self.dim,
            "clusters_per_group": self.clusters_per_group,
            "redundancy_decay": self.redundancy_decay,
            "score_noise": self.score_noise,
            "compression_cap": self.compression_cap,
            "seed": self.seed,
        }


def synthetic_generate(config: SyntheticConfig) -> list[CandidateList]:
    """Generate candidate lists; a pure function of the config.

    Per group, in fixed draw order from one seeded generator: cluster unit
    directions, item cluster assignments, embedding jitter, intrinsic
    utilities, and score noise.  Labels are utility times
    decay**(rank of the item among its cluster mates by utility);
    point scores are min(utility, cap) + noise.
    """
    rng = np.random.default_rng(config.seed)
    n = config.items_per_group
    lists = []
    for g in range(config.groups):
        directions = rng.normal(size=(config.clusters_per_group, config.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        assign = rng.integers(0, config.clusters_per_group, size=n)
        jitter = rng.normal(size=(n, config.dim)) * JITTER_SCALE
        utility = rng.uniform(1.0, 10.0, size=n)
        noise = rng.normal(size=n) * config.score_noise

        emb = directions[assign] + jitter
        emb /= np.linalg.norm(emb, axis=1, keepdims=True)

        labels = np.empty(n)
        for c in np.unique(assign):
            members = np.flatnonzero(assign == c)
            by_utility = members[np.argsort(-utility[members], kind="stable")]
            decay = config.redundancy_decay ** np.arange(len(by_utility))
            labels[by_utility] = utility[by_utility] * decay

        points = np.minimum(utility, config.compression_cap) + noise

        items = tuple(
            ReviewItem(
                id=f"g{g:04d}-r{i:02d}",
                embedding=emb[i],
                point_score=float(points[i]),
                label=float(labels[i]),
            )
            for i in range(n)
        )
        lists.append(CandidateList(group_id=f"g{g:04d}", items=items, dim=config.dim))
    return lists


def oracle_ndcg(dataset, cutoffs=(10,)) -> dict[str, EvalReport]:
    """NDCG of the stored point scores and of the labels themselves.

    Ranking by label always attains 1.0; the pointwise report is the
    baseline figure any trained model should beat on data with planted
    list-level effects.
    """
    return {
        "pointwise": evaluate_dataset(dataset, lambda lst: lst.point_scores(), cutoffs=cutoffs),
        "label": evaluate_dataset(dataset, lambda lst: lst.labels(), cutoffs=cutoffs),
    }
