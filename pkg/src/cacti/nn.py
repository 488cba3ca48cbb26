"""Transformer layer primitives with explicit forward/backward passes.

Every op returns `(out, cache)` and has a matching `*_bwd(dout, cache)`
returning input gradients plus parameter gradients. The architecture is
fixed, so hand-written reverse passes beat a generic tape: evaluation order
is deterministic and every matmul collapses to one GEMM over flattened
tokens. Layer norm and gelu run through the dispatched (numba/NumPy)
kernels; the query/key/value projections share one fused GEMM. Gradient
correctness is enforced by the finite-difference suite.
"""

from __future__ import annotations

import numpy as np

from . import kernels

LAYERNORM_EPS = 1e-6
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def linear_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w.T + b over the last axis; x may have any leading shape."""
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    y = x2 @ w.T + b
    return y.reshape(*lead, w.shape[0]), (x2, w, lead)


def linear_bwd(dout: np.ndarray, cache):
    x2, w, lead = cache
    d2 = dout.reshape(-1, dout.shape[-1])
    dx = (d2 @ w).reshape(*lead, w.shape[1])
    dw = d2.T @ x2
    db = d2.sum(axis=0)
    return dx, dw, db


def layernorm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    out, xhat, inv = kernels.layernorm_fwd(x2, gain, bias, LAYERNORM_EPS)
    return out.reshape(x.shape), (xhat, inv, gain, lead)


def layernorm_bwd(dout: np.ndarray, cache):
    xhat, inv, gain, lead = cache
    d2 = np.ascontiguousarray(dout.reshape(-1, dout.shape[-1]))
    dx, dgain, dbias = kernels.layernorm_bwd(d2, xhat, inv, gain)
    return dx.reshape(dout.shape), dgain, dbias


def gelu_fwd(x: np.ndarray):
    """tanh-approximate gelu."""
    flat = np.ascontiguousarray(x.reshape(-1))
    out, t_cache = kernels.gelu_fwd(flat, _GELU_C, _GELU_A)
    return out.reshape(x.shape), (flat, t_cache)


def gelu_bwd(dout: np.ndarray, cache):
    flat, t_cache = cache
    dflat = np.ascontiguousarray(dout.reshape(-1))
    dx = kernels.gelu_bwd(dflat, flat, t_cache, _GELU_C, _GELU_A)
    return dx.reshape(dout.shape)


def softmax_last(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(t: np.ndarray, b: int, s: int, heads: int, dh: int) -> np.ndarray:
    """(B, S, h*dh) -> contiguous (B*h, S, dh)."""
    return np.ascontiguousarray(
        t.reshape(b, s, heads, dh).transpose(0, 2, 1, 3)).reshape(b * heads, s, dh)


def _merge_heads(t: np.ndarray, b: int, s: int, heads: int, dh: int) -> np.ndarray:
    return t.reshape(b, heads, s, dh).transpose(0, 2, 1, 3).reshape(b, s, heads * dh)


def attention_fwd(x: np.ndarray, p: dict, prefix: str, heads: int):
    """Multi-head softmax self-attention over tokens; x is (B, S, E). The
    q/k/v projections run as one fused (3E x E) GEMM and the per-head
    score/softmax/mix core runs through the dispatched kernel."""
    b, s, e = x.shape
    dh = e // heads
    qkv, c_qkv = linear_fwd(x, p[f"{prefix}.wqkv"], p[f"{prefix}.bqkv"])
    qh = _split_heads(qkv[..., :e], b, s, heads, dh)
    kh = _split_heads(qkv[..., e:2 * e], b, s, heads, dh)
    vh = _split_heads(qkv[..., 2 * e:], b, s, heads, dh)
    scale = 1.0 / np.sqrt(dh)
    mixed, attn = kernels.attention_core_fwd(qh, kh, vh, scale)
    merged = _merge_heads(mixed, b, s, heads, dh)
    out, co = linear_fwd(merged, p[f"{prefix}.wo"], p[f"{prefix}.bo"])
    return out, (c_qkv, co, qh, kh, vh, attn, scale, (b, s, e, heads, dh))


def attention_bwd(dout: np.ndarray, cache):
    c_qkv, co, qh, kh, vh, attn, scale, dims = cache
    b, s, e, heads, dh = dims
    dmerged, dwo, dbo = linear_bwd(dout, co)
    dmixed = _split_heads(dmerged, b, s, heads, dh)
    dqh, dkh, dvh = kernels.attention_core_bwd(dmixed, attn, qh, kh, vh, scale)
    dqkv = np.concatenate([_merge_heads(dqh, b, s, heads, dh),
                           _merge_heads(dkh, b, s, heads, dh),
                           _merge_heads(dvh, b, s, heads, dh)], axis=-1)
    dx, dwqkv, dbqkv = linear_bwd(dqkv, c_qkv)
    grads = {"wqkv": dwqkv, "bqkv": dbqkv, "wo": dwo, "bo": dbo}
    return dx, grads


def block_fwd(x: np.ndarray, p: dict, prefix: str, heads: int):
    """Pre-norm residual block: attention then feed-forward."""
    h1, c_ln1 = layernorm_fwd(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"])
    attn_out, c_attn = attention_fwd(h1, p, f"{prefix}.attn", heads)
    mid = x + attn_out
    h2, c_ln2 = layernorm_fwd(mid, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    f1, c_f1 = linear_fwd(h2, p[f"{prefix}.ff.w1"], p[f"{prefix}.ff.b1"])
    act, c_act = gelu_fwd(f1)
    f2, c_f2 = linear_fwd(act, p[f"{prefix}.ff.w2"], p[f"{prefix}.ff.b2"])
    out = mid + f2
    return out, (c_ln1, c_attn, c_ln2, c_f1, c_act, c_f2)


def block_bwd(dout: np.ndarray, cache, grads: dict, prefix: str):
    """Accumulates parameter grads into `grads` under `prefix`."""
    c_ln1, c_attn, c_ln2, c_f1, c_act, c_f2 = cache
    dact, dw2, db2 = linear_bwd(dout, c_f2)
    df1 = gelu_bwd(dact, c_act)
    dh2, dw1, db1 = linear_bwd(df1, c_f1)
    dmid_from_ff, dg2, dbeta2 = layernorm_bwd(dh2, c_ln2)
    dmid = dout + dmid_from_ff
    dh1, attn_grads = attention_bwd(dmid, c_attn)
    dx_from_attn, dg1, dbeta1 = layernorm_bwd(dh1, c_ln1)
    dx = dmid + dx_from_attn
    grads[f"{prefix}.ff.w2"] = dw2
    grads[f"{prefix}.ff.b2"] = db2
    grads[f"{prefix}.ff.w1"] = dw1
    grads[f"{prefix}.ff.b1"] = db1
    grads[f"{prefix}.ln2.g"] = dg2
    grads[f"{prefix}.ln2.b"] = dbeta2
    for leaf, g in attn_grads.items():
        grads[f"{prefix}.attn.{leaf}"] = g
    grads[f"{prefix}.ln1.g"] = dg1
    grads[f"{prefix}.ln1.b"] = dbeta1
    return dx
