"""Forward and backward passes of the residual list-context head.

The head reads the (N, d) matrix of item embeddings, mixes items with one
multi-head self-attention block (no positional encoding, so the map is
permutation-equivariant), normalizes the residual sum row-wise, sends each
row through a small MLP to get a per-item correction, and adds the
correction to the pointwise scores gated by the scalar ``alpha``.

``forward``/``backward`` run on the active kernel backend; the granular
operations below are plain-numpy reference implementations of the same
pieces, kept independent so the two routes can be checked against each
other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .errors import ShapeError
from .types import CandidateList, ModelParams

LN_EPS = backends.LN_EPS


@dataclass(frozen=True)
class ForwardCache:
    """Every intermediate of one forward pass, as needed for exact reverse mode."""

    H: np.ndarray           # (N, d) input embeddings
    s_point: np.ndarray     # (N,) base scores
    q: np.ndarray           # (heads, N, d_head)
    k: np.ndarray
    v: np.ndarray
    logits: np.ndarray      # (heads, N, N) pre-softmax attention scores
    attn: np.ndarray        # (heads, N, N) softmax weights, rows sum to 1
    headcat: np.ndarray     # (N, d) concatenated head outputs
    attn_out: np.ndarray    # (N, d) after the shared output projection
    z: np.ndarray           # (N, d) residual sum H + attn_out
    mean: np.ndarray        # (N,) row means of z
    var: np.ndarray         # (N,) row population variances of z
    inv_std: np.ndarray     # (N,) 1/sqrt(var + eps)
    xhat: np.ndarray        # (N, d) normalized rows pre-affine
    h_ctx: np.ndarray       # (N, d) context-aware representations
    pre1: np.ndarray        # (N, d) MLP hidden pre-activation
    hidden: np.ndarray      # (N, d) MLP hidden post-ReLU
    delta: np.ndarray       # (N,) per-item corrections
    s_final: np.ndarray     # (N,) aggregated scores

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]


def _check_input(H: np.ndarray, params: ModelParams) -> np.ndarray:
    H = np.ascontiguousarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ShapeError(f"expected a non-empty (N, d) matrix, got shape {H.shape}")
    if H.shape[1] != params.d:
        raise ShapeError(f"input dimension {H.shape[1]} != model dimension {params.d}")
    return H


def mhsa_forward(H: np.ndarray, params: ModelParams):
    """Multi-head self-attention over item rows: softmax(Q K^T / sqrt(d_head)) V.

    Returns the (N, d) output and a fragment dict with per-head q/k/v,
    logits, and attention weights.
    """
    H = _check_input(H, params)
    n, d = H.shape
    d_head = d // params.head_count
    scale = 1.0 / np.sqrt(d_head)
    q = np.matmul(H, params.w_q)
    k = np.matmul(H, params.w_k)
    v = np.matmul(H, params.w_v)
    logits = np.matmul(q, k.transpose(0, 2, 1)) * scale
    shifted = logits - logits.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=2, keepdims=True)
    headcat = np.matmul(attn, v).transpose(1, 0, 2).reshape(n, d)
    out = headcat @ params.w_o
    return out, {"q": q, "k": k, "v": v, "logits": logits, "attn": attn, "headcat": headcat}


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Normalize to zero mean and unit population variance, then apply the affine.

    Works on a single vector or row-wise on a matrix; eps = 1e-5 keeps the
    constant-input case finite (output is then exactly the shift).
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * scale + shift


def residual_block_forward(H: np.ndarray, params: ModelParams) -> np.ndarray:
    """Row-wise layer norm of H + MHSA(H)."""
    out, _ = mhsa_forward(H, params)
    return layer_norm(H + out, params.ln_scale, params.ln_shift)


def delta_head(h_ctx: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-item scalar correction: second affine of ReLU(first affine of the row)."""
    h_ctx = np.asarray(h_ctx, dtype=np.float64)
    if h_ctx.shape[-1] != params.d:
        raise ShapeError(f"context dimension {h_ctx.shape[-1]} != model dimension {params.d}")
    hidden = np.maximum(h_ctx @ params.w1 + params.b1, 0.0)
    return hidden @ params.w2 + params.b2[0]


def score_aggregate(s_point: np.ndarray, delta: np.ndarray, alpha: float) -> np.ndarray:
    """Final scores: pointwise scores plus alpha times the list correction."""
    s_point = np.asarray(s_point, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if s_point.shape != delta.shape:
        raise ShapeError(
            f"score/correction length mismatch: {s_point.shape} vs {delta.shape}",
            code="length-mismatch",
        )
    return s_point + alpha * delta


def forward_arrays(H: np.ndarray, s_point: np.ndarray, params: ModelParams):
    """Array-level forward pass on the active backend; returns (s_final, cache)."""
    H = _check_input(H, params)
    s_point = np.ascontiguousarray(s_point, dtype=np.float64)
    if s_point.shape != (H.shape[0],):
        raise ShapeError(f"expected {H.shape[0]} point scores, got shape {s_point.shape}")
    raw = backends.encoder_forward(
        H, params.w_q, params.w_k, params.w_v, params.w_o,
        params.ln_scale, params.ln_shift,
        params.w1, params.b1, params.w2, params.b2,
    )
    s_final = score_aggregate(s_point, raw["delta"], params.alpha)
    cache = ForwardCache(H=H, s_point=s_point, s_final=s_final, **raw)
    return s_final, cache


def forward(lst: CandidateList, params: ModelParams):
    """Forward pass over a candidate list; returns (s_final, cache)."""
    if lst.dim != params.d:
        raise ShapeError(f"list dimension {lst.dim} != model dimension {params.d}")
    return forward_arrays(lst.embedding_matrix(), lst.point_scores(), params)


def backward(cache: ForwardCache, d_s_final: np.ndarray, params: ModelParams) -> dict:
    """Exact gradients of every parameter given d(loss)/d(s_final).

    Embeddings and pointwise scores are upstream constants, so no gradient
    is produced for them.  The returned dict maps tensor field names to
    gradient arrays and carries the scalar gate gradient under ``"alpha"``.
    """
    d_s_final = np.asarray(d_s_final, dtype=np.float64)
    if d_s_final.shape != (cache.n,):
        raise ShapeError(f"expected gradient of length {cache.n}, got {d_s_final.shape}")
    if cache.d != params.d or cache.q.shape[0] != params.head_count:
        raise ShapeError(
            "cache was produced for a different parameter shape",
            code="cache-mismatch",
        )
    g_alpha = float(np.dot(d_s_final, cache.delta))
    d_delta = params.alpha * d_s_final
    raw_cache = {
        "q": cache.q, "k": cache.k, "v": cache.v, "attn": cache.attn,
        "headcat": cache.headcat, "inv_std": cache.inv_std, "xhat": cache.xhat,
        "h_ctx": cache.h_ctx, "pre1": cache.pre1, "hidden": cache.hidden,
    }
    grads = backends.encoder_backward(
        cache.H, params.w_q, params.w_k, params.w_v, params.w_o,
        params.ln_scale, params.ln_shift,
        params.w1, params.b1, params.w2, params.b2,
        raw_cache, d_delta,
    )
    grads["alpha"] = g_alpha
    return grads


def zero_grads(params: ModelParams) -> dict:
    """A gradient record of zeros shaped like ``params``."""
    out = {name: np.zeros_like(t) for name, t in params.tensors().items()}
    out["alpha"] = 0.0
    return out
