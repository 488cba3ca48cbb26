"""The imputation transformer: embeddings, encoder, decoder, loss, grads.

Per sample, each feature becomes a token: a value embedding (affine map of
the min-max-scaled scalar) concatenated with a projected column-context
embedding, plus a fixed sin-cos positional code. The encoder runs only over
the kept tokens of a batch (padded with zero "null" tokens to the batch
sequence length); the decoder rebuilds all K slots, substituting a learned
mask vector for every feature the encoder did not see, and a 2-layer MLP
head reads out one scalar per feature.

Without context embeddings the context block is absent and the value
embedding spans the full width; no code path reads context in that mode.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .dataset import ScalerState
from .errors import CheckpointError, ConfigError, NumericError
from .masking import MaskedBatch
from .rng import stream

CHECKPOINT_MAGIC = b"CACT"
CHECKPOINT_VERSION = 1
INIT_STD = 0.02

LOSS_MODES = ("both", "observed", "masked")


@dataclass(frozen=True)
class ModelConfig:
    n_features: int
    embed_dim: int = 64
    ctx_fraction: float = 0.25
    n_enc: int = 10
    n_dec: int = 4
    heads: int = 8
    mlp_ratio: int = 4
    ctx_raw_dim: int = 0   # 0 = no-context mode

    def __post_init__(self):
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.embed_dim % 2 != 0:
            raise ConfigError("embed_dim must be even for the sin-cos table")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("embed_dim must be divisible by heads")
        if not 0.0 <= self.ctx_fraction < 1.0:
            raise ConfigError("ctx_fraction must be in [0,1)")
        if self.ctx_raw_dim < 0 or self.n_enc < 0 or self.n_dec < 0:
            raise ConfigError("negative dimension in model config")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")
        if self.ctx_raw_dim > 0 and round(self.ctx_fraction * self.embed_dim) < 1:
            raise ConfigError("context enabled but ctx_fraction allots no width")

    @property
    def ctx_dim(self) -> int:
        if self.ctx_raw_dim == 0:
            return 0
        return int(round(self.ctx_fraction * self.embed_dim))

    @property
    def value_dim(self) -> int:
        return self.embed_dim - self.ctx_dim

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.embed_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def positional_table(n_features: int, embed_dim: int) -> np.ndarray:
    """Fixed sin-cos positional codes: column k gets sin/cos of
    k / 10000^(2i/E) in interleaved pairs."""
    if embed_dim % 2 != 0:
        raise ConfigError("positional table needs an even embedding width")
    k = np.arange(n_features, dtype=np.float64)[:, None]
    i = np.arange(embed_dim // 2, dtype=np.float64)[None, :]
    angle = k / np.power(10000.0, 2.0 * i / embed_dim)
    table = np.empty((n_features, embed_dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def _trunc_normal(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    """Normal(0, INIT_STD) resampled until within +-2 std."""
    x = rng.normal(0.0, INIT_STD, size=shape)
    bad = np.abs(x) > 2 * INIT_STD
    while bad.any():
        x[bad] = rng.normal(0.0, INIT_STD, size=int(bad.sum()))
        bad = np.abs(x) > 2 * INIT_STD
    return np.ascontiguousarray(x.astype(dtype))


def _init_block(params, rng, prefix, e, h, dtype):
    params[f"{prefix}.ln1.g"] = np.ones(e, dtype)
    params[f"{prefix}.ln1.b"] = np.zeros(e, dtype)
    params[f"{prefix}.attn.wqkv"] = _trunc_normal(rng, (3 * e, e), dtype)
    params[f"{prefix}.attn.bqkv"] = np.zeros(3 * e, dtype)
    params[f"{prefix}.attn.wo"] = _trunc_normal(rng, (e, e), dtype)
    params[f"{prefix}.attn.bo"] = np.zeros(e, dtype)
    params[f"{prefix}.ln2.g"] = np.ones(e, dtype)
    params[f"{prefix}.ln2.b"] = np.zeros(e, dtype)
    params[f"{prefix}.ff.w1"] = _trunc_normal(rng, (h, e), dtype)
    params[f"{prefix}.ff.b1"] = np.zeros(h, dtype)
    params[f"{prefix}.ff.w2"] = _trunc_normal(rng, (e, h), dtype)
    params[f"{prefix}.ff.b2"] = np.zeros(e, dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = stream(seed, "init")
    e, u, c, h = cfg.embed_dim, cfg.value_dim, cfg.ctx_dim, cfg.hidden_dim
    params: dict[str, np.ndarray] = {}
    params["enc_val.w"] = _trunc_normal(rng, (u,), dtype)
    params["enc_val.b"] = np.zeros(u, dtype)
    params["dec_val.w"] = _trunc_normal(rng, (u, e), dtype)
    params["dec_val.b"] = np.zeros(u, dtype)
    if c > 0:
        params["enc_ctx.w"] = _trunc_normal(rng, (c, cfg.ctx_raw_dim), dtype)
        params["enc_ctx.b"] = np.zeros(c, dtype)
        params["dec_ctx.w"] = _trunc_normal(rng, (c, cfg.ctx_raw_dim), dtype)
        params["dec_ctx.b"] = np.zeros(c, dtype)
    params["mask_token"] = _trunc_normal(rng, (e,), dtype)
    for i in range(cfg.n_enc):
        _init_block(params, rng, f"enc.{i}", e, h, dtype)
    for i in range(cfg.n_dec):
        _init_block(params, rng, f"dec.{i}", e, h, dtype)
    params["head.w1"] = _trunc_normal(rng, (h, e), dtype)
    params["head.b1"] = np.zeros(h, dtype)
    params["head.w2"] = _trunc_normal(rng, (1, h), dtype)
    params["head.b2"] = np.zeros(1, dtype)
    return params


def param_decay_flags(params: dict[str, np.ndarray]) -> dict[str, bool]:
    """Decoupled weight decay hits every learnable tensor except biases and
    the mask token."""
    flags = {}
    for name in params:
        leaf = name.rsplit(".", 1)[-1]
        flags[name] = not (leaf.startswith("b") or name == "mask_token")
    return flags


def _batch_indices(batch: MaskedBatch):
    counts = batch.keep_counts
    rows = np.repeat(np.arange(batch.size), counts)
    cols = np.concatenate(batch.kept) if batch.size else np.zeros(0, np.int64)
    slots = np.concatenate([np.arange(c) for c in counts])
    return rows, cols, slots


def embed_features(values_scaled: np.ndarray, ctx_matrix: np.ndarray | None,
                   params: dict, cfg: ModelConfig, pos: np.ndarray):
    """Token embeddings for every (sample, feature) cell. Missing values are
    replaced by the protected value 0 before the scalar projection."""
    dtype = params["enc_val.w"].dtype
    x = np.nan_to_num(values_scaled, nan=0.0).astype(dtype, copy=False)
    u = x[..., None] * params["enc_val.w"] + params["enc_val.b"]  # (B, K, U)
    if cfg.ctx_dim > 0:
        if ctx_matrix is None:
            raise ConfigError("model expects context embeddings but none given")
        ctx_e = (ctx_matrix.astype(dtype) @ params["enc_ctx.w"].T
                 + params["enc_ctx.b"])                            # (K, C)
        parts = np.broadcast_to(ctx_e, (x.shape[0],) + ctx_e.shape)
        emb = np.concatenate([u, parts], axis=-1)
    else:
        emb = u
    return (emb + pos.astype(dtype)).astype(dtype, copy=False), x


def _run_blocks(tokens: np.ndarray, params: dict, stem: str, depth: int,
                heads: int, caches: list | None):
    out = tokens
    for i in range(depth):
        out, cache = nn.block_fwd(out, params, f"{stem}.{i}", heads)
        if caches is not None:
            caches.append(cache)
        # cheap screen: a finite sum implies finite entries for our ranges
        if not np.isfinite(float(out.sum(dtype=np.float64))):
            raise NumericError(f"non-finite activations in {stem} block {i}")
    return out


def forward_batch(params: dict, cfg: ModelConfig, values_scaled: np.ndarray,
                  ctx_matrix: np.ndarray | None, batch: MaskedBatch,
                  pos: np.ndarray, want_cache: bool = False):
    """Predict every feature of every sample from the batch's kept tokens.

    Returns (predictions (B, K), cache-or-None). Padding slots hold zero
    null tokens and take part in attention alongside real tokens.
    """
    dtype = params["enc_val.w"].dtype
    b = values_scaled.shape[0]
    k, e = cfg.n_features, cfg.embed_dim
    rows, cols, slots = _batch_indices(batch)

    emb, x_protected = embed_features(values_scaled, ctx_matrix, params, cfg, pos)
    tokens = np.zeros((b, batch.seq_len, e), dtype)
    tokens[rows, slots] = emb[rows, cols]

    enc_caches: list | None = [] if want_cache else None
    latents = _run_blocks(tokens, params, "enc", cfg.n_enc, cfg.heads, enc_caches)

    dec_slots = np.empty((b, k, e), dtype)
    dec_slots[:] = params["mask_token"]
    dec_slots[rows, cols] = latents[rows, slots]

    v, c_decval = nn.linear_fwd(dec_slots, params["dec_val.w"], params["dec_val.b"])
    if cfg.ctx_dim > 0:
        ctx_d = (ctx_matrix.astype(dtype) @ params["dec_ctx.w"].T
                 + params["dec_ctx.b"])
        z = np.concatenate(
            [v, np.broadcast_to(ctx_d, (b,) + ctx_d.shape)], axis=-1)
    else:
        ctx_d = None
        z = v
    z = z + pos.astype(dtype)

    dec_caches: list | None = [] if want_cache else None
    decoded = _run_blocks(z, params, "dec", cfg.n_dec, cfg.heads, dec_caches)

    h1, c_h1 = nn.linear_fwd(decoded, params["head.w1"], params["head.b1"])
    act, c_act = nn.gelu_fwd(h1)
    out, c_h2 = nn.linear_fwd(act, params["head.w2"], params["head.b2"])
    preds = out[..., 0]
    if not np.all(np.isfinite(preds)):
        raise NumericError("non-finite model predictions")
    if not want_cache:
        return preds, None
    cache = {
        "indices": (rows, cols, slots),
        "seq_len": batch.seq_len,
        "x_protected": x_protected,
        "enc_caches": enc_caches,
        "dec_caches": dec_caches,
        "c_decval": c_decval,
        "c_head": (c_h1, c_act, c_h2),
        "dims": (b, k, e),
        "ctx_matrix": ctx_matrix,
        "dtype": dtype,
    }
    return preds, cache


def loss_from_predictions(preds: np.ndarray, targets_scaled: np.ndarray,
                          batch: MaskedBatch, mode: str = "both"):
    """Per-sample mean squared error over kept features plus over hidden
    features, averaged across the batch. Returns (loss, dpreds)."""
    if mode not in LOSS_MODES:
        raise ConfigError(f"loss mode must be one of {LOSS_MODES}, got {mode!r}")
    b = preds.shape[0]
    if any(k.size == 0 for k in batch.kept):
        raise ConfigError("every sample must keep at least one observed feature")
    dpreds = np.zeros_like(preds, dtype=np.float64)
    total = 0.0

    def accumulate(index_sets):
        nonlocal total
        sizes = np.array([s.size for s in index_sets], dtype=np.int64)
        if sizes.sum() == 0:
            return
        rows = np.repeat(np.arange(b), sizes)
        cols = np.concatenate([s for s in index_sets if s.size])
        err = preds[rows, cols].astype(np.float64) - targets_scaled[rows, cols]
        sums = np.bincount(rows, weights=err * err, minlength=b)
        total += float(np.sum(sums / np.maximum(sizes, 1))) / b
        dpreds[rows, cols] += 2.0 * err / (sizes[rows] * b)

    if mode in ("both", "observed"):
        accumulate(batch.kept)
    if mode in ("both", "masked"):
        accumulate(batch.masked)
    return total, dpreds


def backward_batch(dpreds: np.ndarray, params: dict, cfg: ModelConfig,
                   cache: dict) -> dict[str, np.ndarray]:
    """Reverse pass of `forward_batch`; returns gradients keyed like params."""
    rows, cols, slots = cache["indices"]
    b, k, e = cache["dims"]
    dtype = cache["dtype"]
    ctx_matrix = cache["ctx_matrix"]
    grads: dict[str, np.ndarray] = {}

    c_h1, c_act, c_h2 = cache["c_head"]
    dout = dpreds.astype(dtype)[..., None]
    dact, dw2, db2 = nn.linear_bwd(dout, c_h2)
    grads["head.w2"], grads["head.b2"] = dw2, db2
    dh1 = nn.gelu_bwd(dact, c_act)
    ddecoded, dw1, db1 = nn.linear_bwd(dh1, c_h1)
    grads["head.w1"], grads["head.b1"] = dw1, db1

    for i in reversed(range(cfg.n_dec)):
        ddecoded = nn.block_bwd(ddecoded, cache["dec_caches"][i], grads, f"dec.{i}")
    dz = ddecoded

    u = cfg.value_dim
    if cfg.ctx_dim > 0:
        dv = dz[..., :u]
        dctx_d = dz[..., u:].sum(axis=0)                     # (K, C)
        grads["dec_ctx.w"] = dctx_d.T @ ctx_matrix.astype(dtype)
        grads["dec_ctx.b"] = dctx_d.sum(axis=0)
    else:
        dv = dz
    ddec_slots, dwv, dbv = nn.linear_bwd(dv, cache["c_decval"])
    grads["dec_val.w"], grads["dec_val.b"] = dwv, dbv

    d_at_kept = ddec_slots[rows, cols]                       # (nnz, E)
    grads["mask_token"] = ddec_slots.sum(axis=(0, 1)) - d_at_kept.sum(axis=0)
    dlatents = np.zeros((b, cache["seq_len"], e), dtype)
    dlatents[rows, slots] = d_at_kept

    dtokens = dlatents
    for i in reversed(range(cfg.n_enc)):
        dtokens = nn.block_bwd(dtokens, cache["enc_caches"][i], grads, f"enc.{i}")

    demb = np.zeros((b, k, e), dtype)
    demb[rows, cols] = dtokens[rows, slots]
    if cfg.ctx_dim > 0:
        du = demb[..., :u]
        dctx_e = demb[..., u:].sum(axis=0)
        grads["enc_ctx.w"] = dctx_e.T @ ctx_matrix.astype(dtype)
        grads["enc_ctx.b"] = dctx_e.sum(axis=0)
    else:
        du = demb
    x = cache["x_protected"]
    grads["enc_val.w"] = np.einsum("bk,bku->u", x, du)
    grads["enc_val.b"] = du.sum(axis=(0, 1))

    for name, value in params.items():
        if name not in grads:
            grads[name] = np.zeros_like(value)
        else:
            grads[name] = grads[name].astype(value.dtype, copy=False)
    return grads


def loss_and_gradients(params: dict, cfg: ModelConfig, values_scaled: np.ndarray,
                       targets_scaled: np.ndarray, ctx_matrix: np.ndarray | None,
                       batch: MaskedBatch, pos: np.ndarray, mode: str = "both"):
    preds, cache = forward_batch(params, cfg, values_scaled, ctx_matrix, batch,
                                 pos, want_cache=True)
    loss, dpreds = loss_from_predictions(preds, targets_scaled, batch, mode)
    grads = backward_batch(dpreds, params, cfg, cache)
    for name, g in grads.items():
        if not np.isfinite(float(g.sum(dtype=np.float64))):
            raise NumericError(f"non-finite gradient for {name}")
    return loss, grads


# ---------------------------------------------------------------------------
# checkpoint serialization


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    scaler: ScalerState
    schema_digest: str


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Versioned binary: magic, version, JSON header, raw float32 tensors in
    sorted-name order (little endian)."""
    names = sorted(ckpt.params)
    header = {
        "config": ckpt.config.to_dict(),
        "scaler": ckpt.scaler.to_dict(),
        "schema_digest": ckpt.schema_digest,
        "tensors": [[name, list(ckpt.params[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for name in names:
        buf.write(np.ascontiguousarray(
            ckpt.params[name], dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}")
    hlen, = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from None
    offset = 16 + hlen
    params: dict[str, np.ndarray] = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        if offset + count * 4 > len(raw):
            raise CheckpointError(f"{path}: truncated tensor data for {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += count * 4
        params[name] = arr.reshape(shape).astype(np.float32)
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing or truncated tensor data")
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        scaler=ScalerState.from_dict(header["scaler"]),
        schema_digest=header["schema_digest"],
    )
