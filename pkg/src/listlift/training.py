"""Training of the residual head: loss, gradients, optimizer, and the fit loop.

The objective is an NDCG-weighted pairwise logistic loss in the
LambdaRank/LambdaLoss family: for every pair with y_i > y_j the logistic
term log(1 + exp(-(s_i - s_j))) is scaled by the absolute NDCG change a
rank swap of the two items would cause under the current predicted
ranking.  The weights depend on scores only through the sort and are
treated as constants during differentiation (no gradient flows through
the ranking).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backends
from .encoder import backward, forward_arrays
from .errors import DivergenceError, ShapeError, ValidationError
from .metrics import compute_ranks, disc, gain, idcg, ndcg_at_k
from .types import CandidateList, ModelParams, TrainConfig, init_params, validate_list


@dataclass(frozen=True)
class LambdaWeights:
    """Pair-weight matrix for one list under the current predicted ranking.

    delta[i, j] is the weight of the (i beats j) pair when y_i > y_j and 0
    otherwise; entries are constants for differentiation purposes.
    ``degenerate`` flags the all-zero case (ideal DCG is zero).
    """

    delta: np.ndarray
    ranks: np.ndarray
    idcg_value: float
    degenerate: bool = False


def lambda_weights(labels, scores) -> LambdaWeights:
    """Rank-swap NDCG magnitudes |Δgain x Δdisc| / IDCG for all ordered pairs.

    Ranks come from the scores (descending, index tie-break); IDCG is taken
    over the full list.  Pairs with equal labels get weight 0.  When IDCG
    is zero there is nothing to rank for; the matrix is all zeros and the
    result is flagged degenerate rather than raising.
    """
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ShapeError("labels and scores differ in length", code="length-mismatch")
    n = len(y)
    ranks = compute_ranks(s)
    ideal = idcg(y, k=n)
    if ideal <= 0.0:
        return LambdaWeights(
            delta=np.zeros((n, n)), ranks=ranks, idcg_value=ideal, degenerate=True
        )
    gains = np.asarray(gain(y))
    discs = np.asarray(disc(ranks))
    swap_mag = np.abs(
        (gains[:, None] - gains[None, :]) * (discs[:, None] - discs[None, :])
    ) / ideal
    delta = np.where(y[:, None] > y[None, :], swap_mag, 0.0)
    return LambdaWeights(delta=delta, ranks=ranks, idcg_value=ideal)


def _loss_and_grad(scores, labels, weights: LambdaWeights, normalize_pairs: bool):
    loss, grad = backends.pair_loss_grad(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.float64),
        np.ascontiguousarray(weights.delta, dtype=np.float64),
    )
    if normalize_pairs:
        n_pairs = int(np.count_nonzero(weights.delta))
        if n_pairs > 0:
            loss /= n_pairs
            grad = grad / n_pairs
    return loss, grad


def pair_logistic_loss(scores, labels, normalize_pairs: bool = False) -> float:
    """The listwise training loss for one list (weights recomputed from scores)."""
    weights = lambda_weights(labels, scores)
    loss, _ = _loss_and_grad(scores, labels, weights, normalize_pairs)
    return loss


def loss_grad_scores(scores, labels, normalize_pairs: bool = False) -> np.ndarray:
    """d(loss)/d(scores) with the pair weights held constant.

    Each valid pair contributes equal-magnitude opposite-sign amounts to
    its two items, so the gradient always sums to zero.
    """
    weights = lambda_weights(labels, scores)
    _, grad = _loss_and_grad(scores, labels, weights, normalize_pairs)
    return grad


# ---------------------------------------------------------------------------
# AdamW
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """First/second moment accumulators shaped like the parameters."""

    m: dict
    v: dict
    step: int = 0


def init_optimizer_state(params: ModelParams) -> OptimizerState:
    zeros = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    zeros["alpha"] = 0.0
    return OptimizerState(
        m={k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in zeros.items()},
        v=zeros,
        step=0,
    )


def adamw_update(p, g, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One decoupled-weight-decay Adam update for a single tensor.

    The parameter is scaled by (1 - lr * weight_decay) first, then moved by
    the bias-corrected moment ratio.  ``step`` is the 1-based step count.
    Returns (new_p, new_m, new_v).
    """
    p = p * (1.0 - lr * weight_decay)
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p, m, v


def adamw_step(
    params: ModelParams,
    grads: dict,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
):
    """Apply one AdamW step to every tensor and to alpha; returns new (params, state).

    alpha is excluded from weight decay: decaying the residual gate toward
    zero would bias the model back to the pointwise prior.
    """
    new_tensors = {}
    new_m = {}
    new_v = {}
    step = state.step + 1
    for name, p in params.tensors().items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        new_p, m, v = adamw_update(
            p, g, state.m[name], state.v[name], step, lr, beta1, beta2, eps, weight_decay
        )
        new_tensors[name] = new_p
        new_m[name] = m
        new_v[name] = v
    a, am, av = adamw_update(
        params.alpha, float(grads["alpha"]), state.m["alpha"], state.v["alpha"],
        step, lr, beta1, beta2, eps, weight_decay=0.0,
    )
    new_m["alpha"] = am
    new_v["alpha"] = av
    return (
        ModelParams(alpha=float(a), **new_tensors),
        OptimizerState(m=new_m, v=new_v, step=step),
    )


# ---------------------------------------------------------------------------
# Sampling and splits
# ---------------------------------------------------------------------------

def sample_list_size(rng: np.random.Generator, k_min: int, k_max: int, available: int) -> int:
    """Uniform list size in [k_min, min(k_max, available)], clamped to what exists."""
    if not (1 <= k_min <= k_max):
        raise ValidationError(f"need 1 <= k_min <= k_max, got [{k_min}, {k_max}]")
    hi = min(k_max, available)
    lo = min(k_min, hi)
    return int(rng.integers(lo, hi + 1))


def kfold_split(group_ids, folds: int, seed: int):
    """Seeded shuffle then contiguous partition of the group ids into folds.

    Returns a list of (train_ids, test_ids) tuples; folds are disjoint,
    cover every group, and differ in size by at most one.
    """
    ids = list(dict.fromkeys(group_ids))
    if folds < 2:
        raise ValidationError(f"folds must be >= 2, got {folds}")
    if len(ids) < folds:
        raise ValidationError(
            f"need at least {folds} groups for {folds} folds, got {len(ids)}",
            code="too-few-groups",
        )
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    bounds = np.linspace(0, len(ids), folds + 1).astype(int)
    fold_ids = [tuple(shuffled[bounds[i]: bounds[i + 1]]) for i in range(folds)]
    splits = []
    for i in range(folds):
        test = fold_ids[i]
        train = tuple(g for j, f in enumerate(fold_ids) if j != i for g in f)
        splits.append((train, test))
    return splits


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_ndcg: dict[int, float]
    alpha: float


@dataclass
class TrainLog:
    """Per-epoch loss/validation trace plus the run's seed and config snapshot."""

    epochs: list[EpochRecord] = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"record": "run", "seed": self.seed, "config": self.config}) + "\n")
            for rec in self.epochs:
                fh.write(json.dumps({
                    "record": "epoch",
                    "epoch": rec.epoch,
                    "mean_loss": rec.mean_loss,
                    "val_ndcg": {str(k): v for k, v in rec.val_ndcg.items()},
                    "alpha": rec.alpha,
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TrainLog":
        log = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("record") == "run":
                    log.seed = rec.get("seed", 0)
                    log.config = rec.get("config", {})
                elif rec.get("record") == "epoch":
                    log.epochs.append(EpochRecord(
                        epoch=rec["epoch"],
                        mean_loss=rec["mean_loss"],
                        val_ndcg={int(k): v for k, v in rec["val_ndcg"].items()},
                        alpha=rec["alpha"],
                    ))
        return log


def _accumulate(total: dict | None, grads: dict) -> dict:
    if total is None:
        return {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in grads.items()}
    for k, v in grads.items():
        total[k] = total[k] + v
    return total


def _scale_grads(grads: dict, factor: float) -> dict:
    return {k: v * factor for k, v in grads.items()}


def _mean_val_ndcg(val_arrays, params: ModelParams, cutoffs) -> dict[int, float]:
    sums = {k: 0.0 for k in cutoffs}
    for H, p, y in val_arrays:
        s_final, _ = forward_arrays(H, p, params)
        for k in cutoffs:
            sums[k] += ndcg_at_k(s_final, y, k)
    n = max(len(val_arrays), 1)
    return {k: sums[k] / n for k in cutoffs}


def fit(dataset, config: TrainConfig, val_dataset=None):
    """Train the residual head; returns (params, TrainLog).

    Per epoch the lists are visited in a seeded shuffled order; each visit
    draws a sub-list (uniform size, seeded shuffle), runs the forward pass,
    recomputes the pair weights from the current scores, and applies one
    gradient step (gradients are averaged over ``lists_per_batch`` lists).
    Validation NDCG is computed on ``val_dataset`` (the training lists when
    absent) after every epoch.  Fully deterministic for a given config.
    """
    lists = list(dataset)
    if not lists:
        raise ValidationError("cannot fit on an empty dataset", code="empty-list")
    for lst in lists:
        validate_list(lst)
    d = lists[0].dim
    if any(lst.dim != d for lst in lists):
        raise ShapeError("lists have inconsistent embedding dimensions")

    arrays = [(l.embedding_matrix(), l.point_scores(), l.labels()) for l in lists]
    if val_dataset is None:
        val_arrays = arrays
    else:
        val_lists = list(val_dataset)
        for lst in val_lists:
            validate_list(lst)
        val_arrays = [(l.embedding_matrix(), l.point_scores(), l.labels()) for l in val_lists]

    params = init_params(d, config.head_count, config.seed)
    state = init_optimizer_state(params)
    rng = np.random.default_rng(config.seed)
    log = TrainLog(seed=config.seed, config=config.to_dict())

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(arrays))
        losses = []
        batch_grads = None
        batch_size = 0
        for pos, idx in enumerate(order):
            H, p, y = arrays[idx]
            n = H.shape[0]
            size = sample_list_size(rng, config.k_min, config.k_max, n)
            sel = rng.permutation(n)[:size]
            s_final, cache = forward_arrays(H[sel], p[sel], params)
            weights = lambda_weights(y[sel], s_final)
            loss, g_scores = _loss_and_grad(s_final, y[sel], weights, config.normalize_pairs)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, list {lists[idx].group_id!r}"
                )
            losses.append(loss)
            batch_grads = _accumulate(batch_grads, backward(cache, g_scores, params))
            batch_size += 1
            if batch_size == config.lists_per_batch or pos == len(order) - 1:
                params, state = adamw_step(
                    params,
                    _scale_grads(batch_grads, 1.0 / batch_size),
                    state,
                    lr=config.learning_rate,
                    weight_decay=config.weight_decay,
                )
                batch_grads = None
                batch_size = 0
        log.epochs.append(EpochRecord(
            epoch=epoch,
            mean_loss=float(np.mean(losses)) if losses else 0.0,
            val_ndcg=_mean_val_ndcg(val_arrays, params, config.eval_cutoffs),
            alpha=params.alpha,
        ))
    return params, log


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: str
    analytic: float
    numeric: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _frozen_loss(H, s_point, labels, params, delta_mat) -> float:
    s_final, _ = forward_arrays(H, s_point, params)
    loss, _ = backends.pair_loss_grad(s_final, labels, delta_mat)
    return loss


def grad_check(
    params: ModelParams,
    lst: CandidateList,
    step: float = 1e-4,
    tolerance: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The pair weights are frozen at the unperturbed scores for every
    evaluation, mirroring their treatment as detached constants, so the
    compared function is smooth in the parameters (up to ReLU kinks).
    Relative error uses max(|analytic|, |numeric|, 1e-6) as denominator.
    """
    H = lst.embedding_matrix()
    s_point = lst.point_scores()
    labels = lst.labels()
    s_final, cache = forward_arrays(H, s_point, params)
    frozen = lambda_weights(labels, s_final).delta
    _, g_scores = backends.pair_loss_grad(s_final, labels, frozen)
    analytic = backward(cache, g_scores, params)

    worst = ("", 0.0, 0.0, 0.0)  # name, rel, analytic, numeric

    def consider(name, a, n):
        nonlocal worst
        rel = abs(a - n) / max(abs(a), abs(n), 1e-6)
        if rel > worst[1] or not worst[0]:
            worst = (name, rel, a, n)

    for name, tensor in params.tensors().items():
        flat = tensor.ravel()
        for i in range(flat.size):
            bumped = tensor.copy().ravel()
            bumped[i] += step
            plus = _frozen_loss(H, s_point, labels,
                                params.replace(**{name: bumped.reshape(tensor.shape)}), frozen)
            bumped[i] -= 2 * step
            minus = _frozen_loss(H, s_point, labels,
                                 params.replace(**{name: bumped.reshape(tensor.shape)}), frozen)
            numeric = (plus - minus) / (2 * step)
            idx = np.unravel_index(i, tensor.shape)
            consider(f"{name}{list(idx)}", float(analytic[name].ravel()[i]), numeric)

    plus = _frozen_loss(H, s_point, labels, params.replace(alpha=params.alpha + step), frozen)
    minus = _frozen_loss(H, s_point, labels, params.replace(alpha=params.alpha - step), frozen)
    consider("alpha", float(analytic["alpha"]), (plus - minus) / (2 * step))

    name, rel, a, n = worst
    return GradCheckReport(
        max_rel_error=rel, worst_coordinate=name, analytic=a, numeric=n, tolerance=tolerance
    )
