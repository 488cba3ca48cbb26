"""Dispatched hot kernels: numba builds with NumPy twins.

Each kernel exists twice: ``*_nb`` (compiled with ``@njit`` when the numba
backend is active) and ``*_np`` (vectorized NumPy). The public names bind to
whichever build `backend.use_numba()` selects at import time. Both builds
implement the same element order, so results agree across backends.
"""

from __future__ import annotations

import numpy as np

from .backend import njit, use_numba

# ---------------------------------------------------------------------------
# copy-mask adoption: row i takes the permuted row's mask when its draw falls
# under the masking ratio and at least one jointly observed feature survives.


@njit(cache=True)
def _adopt_copy_rows_loops(observed, permuted, draws, ratio, out):
    n_rows, n_cols = observed.shape
    for i in range(n_rows):
        shared = 0
        for k in range(n_cols):
            out[i, k] = observed[i, k]
            if observed[i, k] == 1 and permuted[i, k] == 1:
                shared += 1
        if draws[i] < ratio and shared >= 1:
            for k in range(n_cols):
                out[i, k] = permuted[i, k]


def adopt_copy_rows_np(observed: np.ndarray, permuted: np.ndarray,
                       draws: np.ndarray, ratio: float) -> np.ndarray:
    shared = (observed & permuted).sum(axis=1)
    adopt = (draws < ratio) & (shared >= 1)
    return np.where(adopt[:, None], permuted, observed).astype(np.uint8)


def adopt_copy_rows_nb(observed: np.ndarray, permuted: np.ndarray,
                       draws: np.ndarray, ratio: float) -> np.ndarray:
    out = np.empty_like(observed)
    _adopt_copy_rows_loops(observed, permuted, draws, ratio, out)
    return out


# ---------------------------------------------------------------------------
# median-truncation selection: walk each row in its fresh permutation order,
# keep the first `keep_counts[n]` effectively observed columns, and collect
# every other truly observed column as reconstruction targets.


@njit(cache=True)
def _select_truncated_loops(effective, observed, perms, keep_counts,
                            kept_flat, kept_off, masked_flat, masked_off):
    n_rows, n_cols = effective.shape
    kp = 0
    mp = 0
    for n in range(n_rows):
        kept_off[n] = kp
        masked_off[n] = mp
        taken = 0
        limit = keep_counts[n]
        for idx in range(n_cols):
            col = perms[n, idx]
            if effective[n, col] == 1 and taken < limit:
                kept_flat[kp] = col
                kp += 1
                taken += 1
            elif observed[n, col] == 1:
                masked_flat[mp] = col
                mp += 1
    kept_off[n_rows] = kp
    masked_off[n_rows] = mp


def _select_truncated_alloc(observed, keep_counts):
    kept_total = int(keep_counts.sum())
    masked_total = int(observed.sum()) - kept_total
    kept_flat = np.empty(kept_total, dtype=np.int64)
    masked_flat = np.empty(masked_total, dtype=np.int64)
    n_rows = observed.shape[0]
    kept_off = np.empty(n_rows + 1, dtype=np.int64)
    masked_off = np.empty(n_rows + 1, dtype=np.int64)
    return kept_flat, kept_off, masked_flat, masked_off


def select_truncated_nb(effective, observed, perms, keep_counts):
    kept_flat, kept_off, masked_flat, masked_off = _select_truncated_alloc(
        observed, keep_counts)
    _select_truncated_loops(effective, observed, perms, keep_counts,
                            kept_flat, kept_off, masked_flat, masked_off)
    return kept_flat, kept_off, masked_flat, masked_off


def select_truncated_np(effective, observed, perms, keep_counts):
    kept_flat, kept_off, masked_flat, masked_off = _select_truncated_alloc(
        observed, keep_counts)
    n_rows, n_cols = effective.shape
    kp = 0
    mp = 0
    is_kept = np.zeros(n_cols, dtype=bool)
    for n in range(n_rows):
        kept_off[n] = kp
        masked_off[n] = mp
        order = perms[n]
        eff_in_order = effective[n, order] == 1
        kept_cols = order[eff_in_order][:keep_counts[n]]
        is_kept[:] = False
        is_kept[kept_cols] = True
        masked_cols = order[(observed[n, order] == 1) & ~is_kept[order]]
        kept_flat[kp:kp + kept_cols.size] = kept_cols
        masked_flat[mp:mp + masked_cols.size] = masked_cols
        kp += kept_cols.size
        mp += masked_cols.size
    kept_off[n_rows] = kp
    masked_off[n_rows] = mp
    return kept_flat, kept_off, masked_flat, masked_off


# ---------------------------------------------------------------------------
# fused AdamW tensor update (decoupled weight decay applied first, then the
# bias-corrected moment step). Operates in place on 1-D views.


@njit(cache=True)
def _adamw_update_loops(p, g, m, v, lr, beta1, one_m_beta1, beta2,
                        one_m_beta2, eps, wd, bc1, bc2):
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + one_m_beta1 * g[i]
        v[i] = beta2 * v[i] + one_m_beta2 * g[i] * g[i]
        m_hat = m[i] / bc1
        v_hat = v[i] / bc2
        p[i] = p[i] - lr * wd * p[i] - lr * m_hat / (np.sqrt(v_hat) + eps)


def _adamw_cast_scalars(dtype, lr, beta1, beta2, eps, wd, bc1, bc2):
    cast = dtype.type
    return (cast(lr), cast(beta1), cast(1.0) - cast(beta1), cast(beta2),
            cast(1.0) - cast(beta2), cast(eps), cast(wd), cast(bc1), cast(bc2))


def adamw_update_np(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    (lr, beta1, omb1, beta2, omb2, eps, wd, bc1, bc2) = _adamw_cast_scalars(
        p.dtype, lr, beta1, beta2, eps, wd, bc1, bc2)
    m[:] = beta1 * m + omb1 * g
    v[:] = beta2 * v + omb2 * g * g
    m_hat = m / bc1
    v_hat = v / bc2
    p[:] = p - lr * wd * p - lr * m_hat / (np.sqrt(v_hat) + eps)


def adamw_update_nb(p, g, m, v, lr, beta1, beta2, eps, wd, bc1, bc2):
    (lr, beta1, omb1, beta2, omb2, eps, wd, bc1, bc2) = _adamw_cast_scalars(
        p.dtype, lr, beta1, beta2, eps, wd, bc1, bc2)
    _adamw_update_loops(p, g, m, v, lr, beta1, omb1, beta2, omb2,
                        eps, wd, bc1, bc2)


# ---------------------------------------------------------------------------
# fused layer norm over the last axis (tokens x width), float accumulation
# in double for stable means regardless of the storage dtype.


@njit(cache=True)
def _layernorm_fwd_loops(x, gain, bias, eps, out, xhat, inv):
    n_tok, width = x.shape
    for t in range(n_tok):
        mu = 0.0
        for e in range(width):
            mu += x[t, e]
        mu /= width
        var = 0.0
        for e in range(width):
            d = x[t, e] - mu
            var += d * d
        var /= width
        iv = 1.0 / np.sqrt(var + eps)
        inv[t] = iv
        for e in range(width):
            xh = (x[t, e] - mu) * iv
            xhat[t, e] = xh
            out[t, e] = xh * gain[e] + bias[e]


@njit(cache=True)
def _layernorm_bwd_loops(dout, xhat, inv, gain, dx, dgain, dbias):
    n_tok, width = dout.shape
    for e in range(width):
        dgain[e] = 0.0
        dbias[e] = 0.0
    for t in range(n_tok):
        m1 = 0.0
        m2 = 0.0
        for e in range(width):
            dxh = dout[t, e] * gain[e]
            m1 += dxh
            m2 += dxh * xhat[t, e]
        m1 /= width
        m2 /= width
        iv = inv[t]
        for e in range(width):
            dxh = dout[t, e] * gain[e]
            dx[t, e] = iv * (dxh - m1 - xhat[t, e] * m2)
            dgain[e] += dout[t, e] * xhat[t, e]
            dbias[e] += dout[t, e]


def layernorm_fwd_nb(x2, gain, bias, eps):
    out = np.empty_like(x2)
    xhat = np.empty_like(x2)
    inv = np.empty(x2.shape[0], dtype=x2.dtype)
    _layernorm_fwd_loops(x2, gain, bias, eps, out, xhat, inv)
    return out, xhat, inv


def layernorm_fwd_np(x2, gain, bias, eps):
    mu = x2.mean(axis=1, keepdims=True, dtype=np.float64)
    xc = x2 - mu
    var = (xc * xc).mean(axis=1, keepdims=True, dtype=np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(x2.dtype, copy=False)
    out = xhat * gain + bias
    return out, xhat, inv[:, 0].astype(x2.dtype, copy=False)


def layernorm_bwd_nb(dout2, xhat, inv, gain):
    dx = np.empty_like(dout2)
    dgain = np.empty_like(gain)
    dbias = np.empty_like(gain)
    _layernorm_bwd_loops(dout2, xhat, inv, gain, dx, dgain, dbias)
    return dx, dgain, dbias


def layernorm_bwd_np(dout2, xhat, inv, gain):
    dgain = (dout2 * xhat).sum(axis=0, dtype=np.float64).astype(gain.dtype)
    dbias = dout2.sum(axis=0, dtype=np.float64).astype(gain.dtype)
    dxhat = dout2 * gain
    m1 = dxhat.mean(axis=1, keepdims=True, dtype=np.float64)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True, dtype=np.float64)
    dx = (inv[:, None] * (dxhat - m1 - xhat * m2)).astype(dout2.dtype, copy=False)
    return dx, dgain, dbias


# ---------------------------------------------------------------------------
# fused tanh-approximate gelu over flat arrays.


@njit(cache=True)
def _gelu_fwd_loops(x, c, a, out, t_cache):
    for i in range(x.shape[0]):
        v = x[i]
        t = np.tanh(c * (v + a * v * v * v))
        t_cache[i] = t
        out[i] = 0.5 * v * (1.0 + t)


@njit(cache=True)
def _gelu_bwd_loops(dout, x, t_cache, c, a, dx):
    for i in range(x.shape[0]):
        v = x[i]
        t = t_cache[i]
        sech2 = 1.0 - t * t
        dinner = c * (1.0 + 3.0 * a * v * v)
        dx[i] = dout[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * dinner)


def gelu_fwd_nb(x_flat, c, a):
    out = np.empty_like(x_flat)
    t_cache = np.empty_like(x_flat)
    _gelu_fwd_loops(x_flat, x_flat.dtype.type(c), x_flat.dtype.type(a),
                    out, t_cache)
    return out, t_cache


def gelu_fwd_np(x_flat, c, a):
    c = x_flat.dtype.type(c)
    ca = x_flat.dtype.type(c * a)
    half = x_flat.dtype.type(0.5)
    t_cache = x_flat * x_flat        # x^2
    t_cache *= ca
    t_cache += c                     # c + c*a*x^2
    t_cache *= x_flat                # c*(x + a*x^3)
    np.tanh(t_cache, out=t_cache)
    out = t_cache + x_flat.dtype.type(1.0)
    out *= x_flat
    out *= half
    return out, t_cache


def gelu_bwd_nb(dout_flat, x_flat, t_cache, c, a):
    dx = np.empty_like(x_flat)
    _gelu_bwd_loops(dout_flat, x_flat, t_cache, x_flat.dtype.type(c),
                    x_flat.dtype.type(a), dx)
    return dx


def gelu_bwd_np(dout_flat, x_flat, t_cache, c, a):
    c = x_flat.dtype.type(c)
    ca3 = x_flat.dtype.type(3.0 * c * a)
    half = x_flat.dtype.type(0.5)
    one = x_flat.dtype.type(1.0)
    dinner = x_flat * x_flat
    dinner *= ca3
    dinner += c                       # c*(1 + 3a*x^2)
    sech2 = t_cache * t_cache
    np.subtract(one, sech2, out=sech2)
    dinner *= sech2                   # sech^2 * dinner
    dinner *= x_flat
    dinner += t_cache
    dinner += one                     # (1 + t) + x*sech2*dinner
    dinner *= half
    dinner *= dout_flat
    return dinner


# ---------------------------------------------------------------------------
# fused attention core: scores -> softmax -> value mix, over (batch*heads)
# slices whose per-slice matrices are far too small for BLAS dispatch to pay.


@njit(cache=True)
def _attention_fwd_loops(q, k, v, scale, attn, out):
    n_slice, s_len, d = q.shape
    for b in range(n_slice):
        for s in range(s_len):
            mx = -np.inf
            for t in range(s_len):
                acc = 0.0
                for c in range(d):
                    acc += q[b, s, c] * k[b, t, c]
                acc *= scale
                attn[b, s, t] = acc
                if acc > mx:
                    mx = acc
            total = 0.0
            for t in range(s_len):
                e = np.exp(attn[b, s, t] - mx)
                attn[b, s, t] = e
                total += e
            for t in range(s_len):
                attn[b, s, t] /= total
            for c in range(d):
                acc = 0.0
                for t in range(s_len):
                    acc += attn[b, s, t] * v[b, t, c]
                out[b, s, c] = acc


@njit(cache=True)
def _attention_bwd_loops(dmixed, attn, q, k, v, scale, dq, dk, dv, dattn_row):
    n_slice, s_len, d = q.shape
    for b in range(n_slice):
        for t in range(s_len):
            for c in range(d):
                dv[b, t, c] = 0.0
                dk[b, t, c] = 0.0
        for s in range(s_len):
            row_dot = 0.0
            for t in range(s_len):
                dat = 0.0
                for c in range(d):
                    dat += dmixed[b, s, c] * v[b, t, c]
                dattn_row[t] = dat
                row_dot += dat * attn[b, s, t]
            for c in range(d):
                dq[b, s, c] = 0.0
            for t in range(s_len):
                w = attn[b, s, t]
                dsc = w * (dattn_row[t] - row_dot) * scale
                for c in range(d):
                    dq[b, s, c] += dsc * k[b, t, c]
                    dk[b, t, c] += dsc * q[b, s, c]
                    dv[b, t, c] += w * dmixed[b, s, c]


def attention_core_fwd_nb(q, k, v, scale):
    attn = np.empty((q.shape[0], q.shape[1], q.shape[1]), dtype=q.dtype)
    out = np.empty_like(q)
    _attention_fwd_loops(q, k, v, q.dtype.type(scale), attn, out)
    return out, attn


def attention_core_fwd_np(q, k, v, scale):
    scores = np.matmul(q, k.transpose(0, 2, 1)) * q.dtype.type(scale)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return np.matmul(scores, v), scores


def attention_core_bwd_nb(dmixed, attn, q, k, v, scale):
    dq = np.empty_like(q)
    dk = np.empty_like(k)
    dv = np.empty_like(v)
    dattn_row = np.empty(q.shape[1], dtype=np.float64)
    _attention_bwd_loops(dmixed, attn, q, k, v, q.dtype.type(scale),
                         dq, dk, dv, dattn_row)
    return dq, dk, dv


def attention_core_bwd_np(dmixed, attn, q, k, v, scale):
    dattn = np.matmul(dmixed, v.transpose(0, 2, 1))
    dv = np.matmul(attn.transpose(0, 2, 1), dmixed)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dscores *= q.dtype.type(scale)
    dq = np.matmul(dscores, k)
    dk = np.matmul(dscores.transpose(0, 2, 1), q)
    return dq, dk, dv


# ---------------------------------------------------------------------------
# exact 1-D Wasserstein distance between two sorted samples via a merge over
# the pooled quantile breakpoints.


@njit(cache=True)
def _wasserstein_merge_loops(a, b):
    na = a.shape[0]
    nb = b.shape[0]
    i = 0
    j = 0
    total = 0.0
    prev = 0.0
    have_prev = False
    while i < na or j < nb:
        if j >= nb or (i < na and a[i] <= b[j]):
            value = a[i]
        else:
            value = b[j]
        if have_prev and value > prev:
            total += abs(i / na - j / nb) * (value - prev)
        while i < na and a[i] == value:
            i += 1
        while j < nb and b[j] == value:
            j += 1
        prev = value
        have_prev = True
    return total


def wasserstein_merge_nb(sorted_a: np.ndarray, sorted_b: np.ndarray) -> float:
    return float(_wasserstein_merge_loops(sorted_a, sorted_b))


def wasserstein_merge_np(sorted_a: np.ndarray, sorted_b: np.ndarray) -> float:
    pooled = np.concatenate([sorted_a, sorted_b])
    pooled.sort(kind="mergesort")
    deltas = np.diff(pooled)
    cdf_a = np.searchsorted(sorted_a, pooled[:-1], side="right") / sorted_a.size
    cdf_b = np.searchsorted(sorted_b, pooled[:-1], side="right") / sorted_b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


# ---------------------------------------------------------------------------
# dispatch

if use_numba():
    adopt_copy_rows = adopt_copy_rows_nb
    select_truncated = select_truncated_nb
    adamw_update = adamw_update_nb
    layernorm_fwd = layernorm_fwd_nb
    layernorm_bwd = layernorm_bwd_nb
    attention_core_fwd = attention_core_fwd_nb
    attention_core_bwd = attention_core_bwd_nb
    wasserstein_merge = wasserstein_merge_nb
else:
    adopt_copy_rows = adopt_copy_rows_np
    select_truncated = select_truncated_np
    adamw_update = adamw_update_np
    layernorm_fwd = layernorm_fwd_np
    layernorm_bwd = layernorm_bwd_np
    attention_core_fwd = attention_core_fwd_np
    attention_core_bwd = attention_core_bwd_np
    wasserstein_merge = wasserstein_merge_np

# gelu stays on the NumPy build in both modes: SIMD-vectorized np.tanh beats
# numba's scalar libm loop by an order of magnitude (see bench_kernels.py).
gelu_fwd = gelu_fwd_np
gelu_bwd = gelu_bwd_np

#: both builds of every dispatched kernel, for tests and benchmarks
IMPLEMENTATIONS = {
    "adopt_copy_rows": {"numpy": adopt_copy_rows_np, "numba": adopt_copy_rows_nb},
    "select_truncated": {"numpy": select_truncated_np, "numba": select_truncated_nb},
    "adamw_update": {"numpy": adamw_update_np, "numba": adamw_update_nb},
    "layernorm_fwd": {"numpy": layernorm_fwd_np, "numba": layernorm_fwd_nb},
    "layernorm_bwd": {"numpy": layernorm_bwd_np, "numba": layernorm_bwd_nb},
    "gelu_fwd": {"numpy": gelu_fwd_np, "numba": gelu_fwd_nb},
    "gelu_bwd": {"numpy": gelu_bwd_np, "numba": gelu_bwd_nb},
    "attention_core_fwd": {"numpy": attention_core_fwd_np,
                           "numba": attention_core_fwd_nb},
    "attention_core_bwd": {"numpy": attention_core_bwd_np,
                           "numba": attention_core_bwd_nb},
    "wasserstein_merge": {"numpy": wasserstein_merge_np, "numba": wasserstein_merge_nb},
}
