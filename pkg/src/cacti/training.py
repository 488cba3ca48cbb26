"""Training loop: per-epoch copy-mask regeneration, batch construction,
AdamW with decoupled weight decay, warmup-cosine learning rate, and global
gradient-norm clipping. One seed determines the whole run."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .dataset import Table
from .errors import ConfigError
from .masking import (build_random_batch, build_truncated_batch,
                      build_untruncated_batch, naive_copy_mask)
from .model import (ModelConfig, init_params, loss_and_gradients,
                    param_decay_flags, positional_table)
from .rng import stream

MASK_STRATEGIES = ("mtcm", "naive_cm", "random")
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.90
    beta2: float = 0.95
    weight_decay: float = 0.05
    warmup_epochs: int = 50
    min_lr: float = 1e-5
    grad_clip: float = 5.0
    p_cm: float = 0.90
    mask_strategy: str = "mtcm"
    loss_mode: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("need 0 <= warmup_epochs < epochs")
        if self.lr <= 0 or self.min_lr < 0 or self.min_lr > self.lr:
            raise ConfigError("need 0 < lr and 0 <= min_lr <= lr")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ConfigError(f"mask_strategy must be one of {MASK_STRATEGIES}")
        if self.loss_mode not in ("both", "observed", "masked"):
            raise ConfigError("loss_mode must be both/observed/masked")
        if not 0.0 <= self.p_cm < 1.0:
            raise ConfigError("p_cm must be in [0,1)")
        if self.mask_strategy == "random" and self.p_cm == 0.0:
            raise ConfigError("random masking needs p_cm in (0,1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over the warmup epochs, then cosine decay from lr
    to min_lr, hitting min_lr exactly on the final step."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    total_steps = cfg.epochs * steps_per_epoch
    if step < warmup_steps:
        return cfg.lr * step / warmup_steps
    span = max(1, total_steps - 1 - warmup_steps)
    t = min(1.0, (step - warmup_steps) / span)
    return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamState, lr_t: float, cfg: TrainConfig,
               decay_flags: dict[str, bool] | None = None) -> None:
    """One bias-corrected AdamW update, in place. Weight decay is decoupled
    and skipped for biases and the mask token; the positional table is not a
    parameter and is never touched."""
    if decay_flags is None:
        decay_flags = param_decay_flags(params)
    state.step += 1
    bc1 = 1.0 - cfg.beta1 ** state.step
    bc2 = 1.0 - cfg.beta2 ** state.step
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        wd = cfg.weight_decay if decay_flags[name] else 0.0
        kernels.adamw_update(p.reshape(-1), g.reshape(-1).astype(p.dtype, copy=False),
                             state.m[name].reshape(-1), state.v[name].reshape(-1),
                             lr_t, cfg.beta1, cfg.beta2, ADAM_EPS, wd, bc1, bc2)
        if not np.isfinite(float(p.sum(dtype=np.float64))):
            raise FloatingPointError(
                f"non-finite parameter {name} after optimizer step {state.step}")


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = 0.0
    for g in grads.values():
        flat = g.reshape(-1)
        total += float(np.dot(flat, flat))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for name in grads:
            grads[name] = (grads[name] * grads[name].dtype.type(scale))
    return norm


def _batch_slices(n_rows: int, batch_size: int):
    for start in range(0, n_rows, batch_size):
        yield slice(start, min(start + batch_size, n_rows))


def train(train_table: Table, ctx_matrix: np.ndarray | None,
          model_cfg: ModelConfig, train_cfg: TrainConfig,
          dtype=np.float32) -> tuple[dict[str, np.ndarray], list[tuple]]:
    """Fit the model on a scaled table. Returns (params, loss trace) where
    the trace holds one (epoch, mean_loss, lr) row per epoch.

    The table must already be min-max scaled; every row needs at least one
    observed cell. Copy masks are regenerated every epoch, so over training
    the empirical missingness patterns are resampled with replacement.
    """
    observed = train_table.observed
    if np.any(observed.sum(axis=1) == 0):
        empty = np.flatnonzero(observed.sum(axis=1) == 0).tolist()
        raise ConfigError(
            f"rows with zero observed cells cannot be trained on: {empty}; "
            "drop them or regenerate the mask with another seed")
    if model_cfg.n_features != train_table.n_cols:
        raise ConfigError("model n_features does not match the table")
    if model_cfg.ctx_dim > 0 and ctx_matrix is None:
        raise ConfigError("model expects context but none was provided")

    n = train_table.n_rows
    values = train_table.values
    targets = np.nan_to_num(values, nan=0.0)
    pos = positional_table(model_cfg.n_features, model_cfg.embed_dim)
    params = init_params(model_cfg, train_cfg.seed, dtype=dtype)
    state = AdamState.for_params(params)
    decay_flags = param_decay_flags(params)
    rng = stream(train_cfg.seed, "train")
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)

    trace: list[tuple] = []
    step = 0
    lr_t = 0.0
    for epoch in range(train_cfg.epochs):
        if train_cfg.mask_strategy in ("mtcm", "naive_cm"):
            copy_mask = naive_copy_mask(observed, train_cfg.p_cm, rng)
        order = rng.permutation(n)
        epoch_losses = []
        for rows_slice in _batch_slices(n, train_cfg.batch_size):
            rows = order[rows_slice]
            obs_b = observed[rows]
            if train_cfg.mask_strategy == "mtcm":
                batch = build_truncated_batch(obs_b, copy_mask[rows], rng,
                                              sample_ids=rows)
            elif train_cfg.mask_strategy == "naive_cm":
                batch = build_untruncated_batch(obs_b, copy_mask[rows],
                                                sample_ids=rows)
            else:
                batch = build_random_batch(obs_b, train_cfg.p_cm, rng,
                                           sample_ids=rows)
            lr_t = lr_at(step, steps_per_epoch, train_cfg)
            loss, grads = loss_and_gradients(
                params, model_cfg, values[rows], targets[rows], ctx_matrix,
                batch, pos, train_cfg.loss_mode)
            clip_global_norm(grads, train_cfg.grad_clip)
            adamw_step(params, grads, state, lr_t, train_cfg, decay_flags)
            epoch_losses.append(loss)
            step += 1
        trace.append((epoch, float(np.mean(epoch_losses)), lr_t))
    return params, trace


def write_trace(trace: list[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, mean_loss, lr in trace:
            writer.writerow([epoch, repr(float(mean_loss)), repr(float(lr))])
