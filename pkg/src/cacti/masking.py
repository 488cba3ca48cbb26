"""Training-time mask generation.

Three strategies feed the trainer: naive copy masking (each row adopts
another row's empirical missingness pattern with probability p_cm, guarded
so at least one jointly observed feature survives), median-truncated
batches (per-batch truncation of every sample's kept token count to the
batch median, bounding null padding at 50%), and uniform random masking
(the conventional masked-autoencoder baseline).

Consumers always work with the effective mask (observed AND copy mask):
an adopted pattern may mark cells the row never had.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import MaskError


@dataclass(frozen=True)
class CopyMaskConfig:
    ratio: float = 0.90  # probability a row adopts a permuted pattern
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"copy-mask ratio must be in [0,1), got {self.ratio}")


@dataclass
class MaskedBatch:
    """Per-batch output of a masking strategy.

    `kept[n]` lists the columns the encoder sees for sample n, in selection
    order; `masked[n]` lists observed columns hidden from the encoder that
    the loss reconstructs. Sequences are padded with null tokens up to
    `seq_len`.
    """
    sample_ids: np.ndarray
    copy_mask: np.ndarray            # (B, K) uint8
    kept: list[np.ndarray] = field(default_factory=list)
    masked: list[np.ndarray] = field(default_factory=list)
    keep_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    seq_len: int = 0
    pad_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def size(self) -> int:
        return len(self.kept)

    def pad_fraction(self) -> float:
        return float(self.pad_counts.sum()) / float(self.size * self.seq_len)

    def validate(self, observed: np.ndarray, enforce_pad_bound: bool = True) -> None:
        """Assert the structural invariants against the true observed mask."""
        if self.size == 0:
            raise MaskError("empty batch")
        for n in range(self.size):
            kept, masked = self.kept[n], self.masked[n]
            if kept.size < 1:
                raise AssertionError(f"sample {n}: no kept feature")
            if kept.size != self.keep_counts[n]:
                raise AssertionError(f"sample {n}: kept size != keep count")
            if kept.size + self.pad_counts[n] != self.seq_len:
                raise AssertionError(f"sample {n}: kept + pads != seq_len")
            if np.intersect1d(kept, masked).size:
                raise AssertionError(f"sample {n}: kept and masked overlap")
            union = np.concatenate([kept, masked])
            if union.size != np.unique(union).size:
                raise AssertionError(f"sample {n}: duplicated column index")
            if not np.all(observed[n, union] == 1):
                raise AssertionError(f"sample {n}: selected a truly missing column")
        if enforce_pad_bound and self.pad_fraction() > 0.5:
            raise AssertionError("null-token fraction exceeded 50%")


def naive_copy_mask(observed: np.ndarray, ratio: float, rng: np.random.Generator,
                    permutation: np.ndarray | None = None,
                    adopt_draws: np.ndarray | None = None) -> np.ndarray:
    """Row-permute the observed mask and let each row adopt the permuted
    pattern with probability `ratio`, skipping adoptions that would leave a
    row without any jointly observed feature.

    `permutation` and `adopt_draws` exist as test hooks; by default both
    come from `rng` (permutation first, then one uniform per row).
    """
    observed = np.asarray(observed, dtype=np.uint8)
    if observed.ndim != 2:
        raise MaskError("observed mask must be 2-D")
    if np.any(observed.sum(axis=1) == 0):
        raise MaskError("every row needs at least one observed feature")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"copy-mask ratio must be in [0,1), got {ratio}")
    n_rows = observed.shape[0]
    if permutation is None:
        permutation = rng.permutation(n_rows)
    if adopt_draws is None:
        adopt_draws = rng.random(n_rows)
    permuted = observed[np.asarray(permutation)]
    return kernels.adopt_copy_rows(observed, permuted,
                                   np.asarray(adopt_draws, dtype=np.float64),
                                   float(ratio))


def _lower_median(counts: np.ndarray) -> int:
    """Order statistic ceil(B/2): the lower median, always an attained
    integer count."""
    ordered = np.sort(counts)
    return int(ordered[(counts.size + 1) // 2 - 1])


def build_truncated_batch(observed: np.ndarray, copy_mask: np.ndarray,
                          rng: np.random.Generator,
                          sample_ids: np.ndarray | None = None) -> MaskedBatch:
    """Median-truncated batch: count effectively kept features per row, cap
    each row at the batch's (lower) median count, and pick the survivors by
    a fresh per-row permutation. Observed features that fall out, whether
    copy-masked or truncated away, become reconstruction targets."""
    observed = np.asarray(observed, dtype=np.uint8)
    copy_mask = np.asarray(copy_mask, dtype=np.uint8)
    if observed.shape != copy_mask.shape:
        raise MaskError("observed and copy mask shapes differ")
    n_rows, n_cols = observed.shape
    if n_rows == 0:
        raise MaskError("empty batch")
    effective = observed & copy_mask
    counts = effective.sum(axis=1).astype(np.int64)
    if np.any(counts == 0):
        raise MaskError("a row lost all observed features; the copy-mask "
                        "guard should prevent this")
    median_count = _lower_median(counts)
    keep_counts = np.minimum(counts, median_count)
    perms = np.empty((n_rows, n_cols), dtype=np.int64)
    for n in range(n_rows):
        perms[n] = rng.permutation(n_cols)
    kept_flat, kept_off, masked_flat, masked_off = kernels.select_truncated(
        effective, observed, perms, keep_counts)
    batch = MaskedBatch(
        sample_ids=np.arange(n_rows) if sample_ids is None else np.asarray(sample_ids),
        copy_mask=copy_mask,
        kept=[kept_flat[kept_off[n]:kept_off[n + 1]] for n in range(n_rows)],
        masked=[masked_flat[masked_off[n]:masked_off[n + 1]] for n in range(n_rows)],
        keep_counts=keep_counts,
        seq_len=median_count,
        pad_counts=(median_count - keep_counts).astype(np.int64),
    )
    return batch


def build_untruncated_batch(observed: np.ndarray, copy_mask: np.ndarray,
                            sample_ids: np.ndarray | None = None) -> MaskedBatch:
    """Naive copy-masked batch: every effectively kept feature stays (natural
    column order); sequences pad up to the batch maximum."""
    observed = np.asarray(observed, dtype=np.uint8)
    copy_mask = np.asarray(copy_mask, dtype=np.uint8)
    if observed.shape != copy_mask.shape:
        raise MaskError("observed and copy mask shapes differ")
    n_rows = observed.shape[0]
    if n_rows == 0:
        raise MaskError("empty batch")
    effective = observed & copy_mask
    counts = effective.sum(axis=1).astype(np.int64)
    if np.any(counts == 0):
        raise MaskError("a row lost all observed features")
    seq_len = int(counts.max())
    kept = [np.flatnonzero(effective[n]).astype(np.int64) for n in range(n_rows)]
    masked = [np.flatnonzero((observed[n] == 1) & (effective[n] == 0)).astype(np.int64)
              for n in range(n_rows)]
    return MaskedBatch(
        sample_ids=np.arange(n_rows) if sample_ids is None else np.asarray(sample_ids),
        copy_mask=copy_mask,
        kept=kept,
        masked=masked,
        keep_counts=counts,
        seq_len=seq_len,
        pad_counts=(seq_len - counts).astype(np.int64),
    )


def build_random_batch(observed: np.ndarray, ratio: float,
                       rng: np.random.Generator,
                       sample_ids: np.ndarray | None = None) -> MaskedBatch:
    """Uniform random masking: every observed cell is hidden independently
    with probability `ratio`; one uniformly chosen observed cell is forced
    back when a row would lose everything."""
    observed = np.asarray(observed, dtype=np.uint8)
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"random mask ratio must be in (0,1), got {ratio}")
    n_rows = observed.shape[0]
    if n_rows == 0:
        raise MaskError("empty batch")
    if np.any(observed.sum(axis=1) == 0):
        raise MaskError("every row needs at least one observed feature")
    hide = (rng.random(observed.shape) < ratio) & (observed == 1)
    effective = ((observed == 1) & ~hide).astype(np.uint8)
    for n in range(n_rows):
        if effective[n].sum() == 0:
            obs_cols = np.flatnonzero(observed[n])
            keep = obs_cols[rng.integers(obs_cols.size)]
            effective[n, keep] = 1
    counts = effective.sum(axis=1).astype(np.int64)
    seq_len = int(counts.max())
    kept = [np.flatnonzero(effective[n]).astype(np.int64) for n in range(n_rows)]
    masked = [np.flatnonzero((observed[n] == 1) & (effective[n] == 0)).astype(np.int64)
              for n in range(n_rows)]
    return MaskedBatch(
        sample_ids=np.arange(n_rows) if sample_ids is None else np.asarray(sample_ids),
        copy_mask=effective.astype(np.uint8),
        kept=kept,
        masked=masked,
        keep_counts=counts,
        seq_len=seq_len,
        pad_counts=(seq_len - counts).astype(np.int64),
    )
