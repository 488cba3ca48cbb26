"""Inference: fill every missing cell of a table with model estimates.

Each row's encoder sees exactly its truly observed features; the decoder
substitutes the learned mask vector at missing slots. Observed cells pass
through bit-identical, and only missing cells take model values, mapped back
to the original scale through the train-fitted scaler.

Rows are forwarded one at a time: every matrix product then has shapes
determined solely by that row's observed count, so results are bitwise
independent of batching and row order (grouped GEMMs are not, their
accumulation order depends on how many rows are stacked).
"""

from __future__ import annotations

import numpy as np

from .dataset import Table, scale_values, schema_digest, unscale_values
from .errors import CheckpointError, ShapeError
from .masking import MaskedBatch
from .model import Checkpoint, forward_batch, positional_table


def _single_row_batch(observed_row: np.ndarray, sample_id: int) -> MaskedBatch:
    """Inference batch for one row: kept = all observed columns, nothing
    masked, no padding."""
    kept = np.flatnonzero(observed_row).astype(np.int64)
    return MaskedBatch(
        sample_ids=np.array([sample_id]),
        copy_mask=observed_row[None, :].astype(np.uint8),
        kept=[kept],
        masked=[np.zeros(0, np.int64)],
        keep_counts=np.array([kept.size]),
        seq_len=int(kept.size),
        pad_counts=np.array([0]),
    )


def impute(table: Table, ctx_matrix: np.ndarray | None, ckpt: Checkpoint,
           round_categorical: bool = False, batch_size: int = 256) -> Table:
    """Impute a table in the original scale; the scaler always comes from the
    checkpoint (train-fitted), never refit, so the same call serves in-sample
    and out-of-sample tables. `batch_size` only chunks the row loop; it
    cannot change results."""
    if schema_digest(table.schema) != ckpt.schema_digest:
        raise CheckpointError("checkpoint schema mismatch")
    cfg = ckpt.config
    if cfg.n_features != table.n_cols:
        raise CheckpointError("checkpoint schema mismatch")
    if ctx_matrix is not None and ctx_matrix.shape != (cfg.n_features, cfg.ctx_raw_dim):
        raise ShapeError(
            f"context matrix shape {ctx_matrix.shape} != "
            f"{(cfg.n_features, cfg.ctx_raw_dim)}")

    observed = table.observed
    row_counts = observed.sum(axis=1)
    if np.any(row_counts == 0):
        bad = np.flatnonzero(row_counts == 0).tolist()
        raise ValueError(f"rows with no observed feature cannot be imputed: {bad}")

    out_values = table.values.copy()
    needs_fill = np.flatnonzero((observed == 0).any(axis=1))
    if needs_fill.size:
        scaled = scale_values(table.values, ckpt.scaler)
        pos = positional_table(cfg.n_features, cfg.embed_dim)
        for row in needs_fill:
            batch = _single_row_batch(observed[row], int(row))
            preds, _ = forward_batch(ckpt.params, cfg, scaled[row:row + 1],
                                     ctx_matrix, batch, pos)
            filled = unscale_values(preds[0].astype(np.float64), ckpt.scaler)
            hidden = observed[row] == 0
            out_values[row, hidden] = filled[hidden]

    if round_categorical:
        for j, col in enumerate(table.schema):
            if col.kind != "categorical":
                continue
            hidden = observed[:, j] == 0
            codes = np.rint(out_values[hidden, j])
            out_values[hidden, j] = np.clip(codes, 0, len(col.categories) - 1)

    return Table(list(table.schema), out_values,
                 np.ones_like(observed, dtype=np.uint8))


# Out-of-sample imputation is mechanically identical: the checkpoint carries
# the train-fitted scaler and the model is stateless at inference.
impute_out_of_sample = impute
