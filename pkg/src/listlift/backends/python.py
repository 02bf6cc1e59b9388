"""Numpy implementations of the hot kernels.

This is the fallback used when the compiled extension is unavailable; the
two backends expose identical signatures and agree to floating-point
reordering tolerance.  Inputs are float64 C-contiguous arrays; the caller
owns shape validation.
"""
from __future__ import annotations

import numpy as np

LN_EPS = 1e-5

NAME = "python"


def encoder_forward(H, w_q, w_k, w_v, w_o, ln_scale, ln_shift, w1, b1, w2, b2):
    """One attention block plus the per-item MLP; returns every intermediate.

    The returned dict holds, keyed by name: per-head q/k/v projections and
    attention logits/weights, the concatenated head outputs, the residual
    sum ``z`` with its row statistics, the normalized context ``h_ctx``,
    the MLP pre/post activations, and the per-item correction ``delta``.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    n, d = H.shape
    d_head = w_q.shape[2]
    scale = 1.0 / np.sqrt(d_head)

    q = np.matmul(H, w_q)  # (heads, n, d_head)
    k = np.matmul(H, w_k)
    v = np.matmul(H, w_v)
    logits = np.matmul(q, k.transpose(0, 2, 1)) * scale  # (heads, n, n)
    shifted = logits - logits.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=2, keepdims=True)
    head_out = np.matmul(attn, v)  # (heads, n, d_head)
    headcat = head_out.transpose(1, 0, 2).reshape(n, d)
    attn_out = headcat @ w_o
    z = H + attn_out

    mean = z.mean(axis=1)
    var = z.var(axis=1)  # population variance over the d coordinates
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (z - mean[:, None]) * inv_std[:, None]
    h_ctx = xhat * ln_scale + ln_shift

    pre1 = h_ctx @ w1 + b1
    hidden = np.maximum(pre1, 0.0)
    delta = hidden @ w2 + b2[0]

    return {
        "q": q,
        "k": k,
        "v": v,
        "logits": logits,
        "attn": attn,
        "headcat": headcat,
        "attn_out": attn_out,
        "z": z,
        "mean": mean,
        "var": var,
        "inv_std": inv_std,
        "xhat": xhat,
        "h_ctx": h_ctx,
        "pre1": pre1,
        "hidden": hidden,
        "delta": delta,
    }


def encoder_backward(H, w_q, w_k, w_v, w_o, ln_scale, ln_shift, w1, b1, w2, b2, cache, d_delta):
    """Exact reverse-mode gradients of the block given d(loss)/d(delta).

    Inputs H are constants upstream, so no input gradient is produced.
    Returns a dict of gradients named like the parameter tensors.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    n, d = H.shape
    heads, _, d_head = w_q.shape
    scale = 1.0 / np.sqrt(d_head)
    d_delta = np.asarray(d_delta, dtype=np.float64)

    hidden = cache["hidden"]
    pre1 = cache["pre1"]
    h_ctx = cache["h_ctx"]
    xhat = cache["xhat"]
    inv_std = cache["inv_std"]
    headcat = cache["headcat"]
    attn = cache["attn"]
    q = cache["q"]
    k = cache["k"]
    v = cache["v"]

    g_w2 = hidden.T @ d_delta
    g_b2 = np.array([d_delta.sum()])
    d_hidden = np.outer(d_delta, w2)
    d_pre1 = d_hidden * (pre1 > 0.0)
    g_w1 = h_ctx.T @ d_pre1
    g_b1 = d_pre1.sum(axis=0)
    d_hctx = d_pre1 @ w1.T

    g_scale = (d_hctx * xhat).sum(axis=0)
    g_shift = d_hctx.sum(axis=0)
    d_xhat = d_hctx * ln_scale
    row_mean = d_xhat.mean(axis=1, keepdims=True)
    row_proj = (d_xhat * xhat).mean(axis=1, keepdims=True)
    d_z = inv_std[:, None] * (d_xhat - row_mean - xhat * row_proj)

    g_wo = headcat.T @ d_z
    d_headcat = d_z @ w_o.T
    d_heads = np.ascontiguousarray(d_headcat.reshape(n, heads, d_head).transpose(1, 0, 2))

    d_attn = np.matmul(d_heads, v.transpose(0, 2, 1))  # (heads, n, n)
    d_v = np.matmul(attn.transpose(0, 2, 1), d_heads)
    inner = (d_attn * attn).sum(axis=2, keepdims=True)
    d_logits = attn * (d_attn - inner)
    d_q = np.matmul(d_logits, k) * scale
    d_k = np.matmul(d_logits.transpose(0, 2, 1), q) * scale

    g_wq = np.matmul(H.T, d_q)  # (heads, d, d_head) via broadcasting
    g_wk = np.matmul(H.T, d_k)
    g_wv = np.matmul(H.T, d_v)

    return {
        "w_q": g_wq,
        "w_k": g_wk,
        "w_v": g_wv,
        "w_o": g_wo,
        "ln_scale": g_scale,
        "ln_shift": g_shift,
        "w1": g_w1,
        "b1": g_b1,
        "w2": g_w2,
        "b2": g_b2,
    }


def pair_loss_grad(scores, labels, weight_mat):
    """Weighted pairwise logistic loss and its exact score gradient.

    ``weight_mat[i, j]`` is the pair weight for i beating j; it is zero on
    invalid pairs and is treated as a constant.  Returns (loss, grad) where
    grad[i] = d(loss)/d(scores[i]).
    """
    s = np.asarray(scores, dtype=np.float64)
    margins = s[:, None] - s[None, :]
    loss = float(np.sum(weight_mat * np.logaddexp(0.0, -margins)))
    # sigmoid(-m) via tanh for overflow-free evaluation
    sig = 0.5 * (1.0 - np.tanh(0.5 * margins))
    g = weight_mat * sig
    grad = g.sum(axis=0) - g.sum(axis=1)
    return loss, grad
