"""Missingness simulation (MCAR / MAR / MNAR) and mask application.

Masks use 1 = observed, 0 = missing, matching the table's observed layout.
MAR follows the logistic convention: a random always-observed column subset
drives per-column logits built from z-scored inputs and unit-variance
Gaussian weights, with intercepts calibrated by bisection so the mean
missing probability hits the target rate. MNAR reuses the MAR construction
and additionally hides the conditioning columns completely at random, so
missingness of the remaining columns depends on values that may themselves
be missing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .dataset import Table
from .errors import MaskError, ShapeError, SimulationError
from .rng import stream

MECHANISMS = ("MCAR", "MAR", "MNAR")

_BISECT_LO = -50.0
_BISECT_HI = 50.0
_BISECT_MAX_ITER = 100
_BISECT_TOL = 1e-6


@dataclass(frozen=True)
class SimConfig:
    mechanism: str
    p_miss: float
    p_obs: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}")
        if not 0.0 < self.p_miss < 1.0:
            raise ValueError(f"p_miss must be in (0,1), got {self.p_miss}")
        if not 0.0 < self.p_obs < 1.0:
            raise ValueError(f"p_obs must be in (0,1), got {self.p_obs}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def simulate_mcar(n_rows: int, n_cols: int, p_miss: float, seed: int) -> np.ndarray:
    """Each cell missing independently with probability p_miss."""
    if not 0.0 < p_miss < 1.0:
        raise ValueError(f"p_miss must be strictly inside (0,1), got {p_miss}")
    if n_rows < 1 or n_cols < 1:
        raise ValueError("mask dimensions must be positive")
    rng = stream(seed, "mcar")
    return (rng.random((n_rows, n_cols)) >= p_miss).astype(np.uint8)


def _calibrate_intercept(logits: np.ndarray, p_miss: float) -> float:
    """Bisection for b with mean(sigmoid(logits + b)) == p_miss."""
    def gap(b: float) -> float:
        return float(np.mean(_sigmoid(logits + b))) - p_miss

    lo, hi = _BISECT_LO, _BISECT_HI
    if gap(lo) > 0 or gap(hi) < 0:
        raise SimulationError(
            "intercept calibration cannot bracket the target missing rate")
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        g = gap(mid)
        if abs(g) <= _BISECT_TOL:
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    if abs(gap(mid)) > 1e-4:
        raise SimulationError(
            f"intercept calibration did not converge after {_BISECT_MAX_ITER} "
            "bisection steps")
    return mid


def _mar_core(x: np.ndarray, p_miss: float, p_obs: float,
              rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shared MAR machinery; returns (mask, observed column indices)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("data matrix must be 2-D")
    if np.any(np.isnan(x)):
        raise ValueError("MAR/MNAR simulation needs a fully observed matrix")
    n, k = x.shape
    if k < 2:
        raise ValueError("MAR/MNAR need at least 2 columns")
    if not 0.0 < p_miss < 1.0:
        raise ValueError(f"p_miss must be in (0,1), got {p_miss}")
    if not 0.0 < p_obs < 1.0:
        raise ValueError(f"p_obs must be in (0,1), got {p_obs}")

    d_obs = max(1, int(np.floor(p_obs * k)))
    if d_obs >= k:
        d_obs = k - 1
    obs_cols = np.sort(rng.choice(k, size=d_obs, replace=False))
    maskable = np.setdiff1d(np.arange(k), obs_cols)

    cond = x[:, obs_cols]
    mu = cond.mean(axis=0)
    sd = cond.std(axis=0)
    z = np.where(sd == 0, 0.0, (cond - mu) / np.where(sd == 0, 1.0, sd))

    mask = np.ones((n, k), dtype=np.uint8)
    weights = rng.normal(size=(d_obs, maskable.size))
    for idx, col in enumerate(maskable):
        logits = z @ weights[:, idx]
        spread = logits.std()
        if spread > 0:
            logits = logits / spread
        else:
            logits = np.zeros(n)
        intercept = _calibrate_intercept(logits, p_miss)
        p_cell = _sigmoid(logits + intercept)
        mask[:, col] = (rng.random(n) >= p_cell).astype(np.uint8)
    return mask, obs_cols


def _mnar_core(x: np.ndarray, p_miss: float, p_obs: float,
               seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = stream(seed, "mar")
    mask, obs_cols = _mar_core(x, p_miss, p_obs, rng)
    n = mask.shape[0]
    for col in obs_cols:
        mask[:, col] = (rng.random(n) >= p_miss).astype(np.uint8)
    return mask, obs_cols


def simulate_mar(x: np.ndarray, p_miss: float, p_obs: float, seed: int) -> np.ndarray:
    mask, _ = _mar_core(x, p_miss, p_obs, stream(seed, "mar"))
    return mask


def simulate_mnar(x: np.ndarray, p_miss: float, p_obs: float, seed: int) -> np.ndarray:
    """MAR construction plus Bernoulli(p_miss) hiding of the conditioning
    columns. Shares the MAR random stream, so with the same seed the
    non-input columns match `simulate_mar` exactly."""
    return _mnar_core(x, p_miss, p_obs, seed)[0]


def simulate(x: np.ndarray, cfg: SimConfig) -> tuple[np.ndarray, dict]:
    """Run the configured mechanism; returns (mask, metadata sidecar)."""
    if cfg.mechanism == "MCAR":
        mask = simulate_mcar(x.shape[0], x.shape[1], cfg.p_miss, cfg.seed)
        obs_cols = np.array([], dtype=np.int64)
    elif cfg.mechanism == "MAR":
        mask, obs_cols = _mar_core(x, cfg.p_miss, cfg.p_obs, stream(cfg.seed, "mar"))
    else:
        mask, obs_cols = _mnar_core(x, cfg.p_miss, cfg.p_obs, cfg.seed)

    k = mask.shape[1]
    maskable = np.setdiff1d(np.arange(k), obs_cols)
    meta = {
        "mechanism": cfg.mechanism,
        "p_miss": cfg.p_miss,
        "p_obs": cfg.p_obs if cfg.mechanism != "MCAR" else None,
        "seed": cfg.seed,
        "observed_columns": obs_cols.tolist(),
        "realized_rate": {
            "overall": float(1.0 - mask.mean()),
            "maskable": float(1.0 - mask[:, maskable].mean()) if maskable.size else 0.0,
        },
    }
    return mask, meta


def ensure_row_coverage(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Force one uniformly chosen cell back to observed in any all-missing
    row. Training and imputation require at least one observed cell per row;
    simulated masks occasionally strand a row, so harnesses patch them."""
    mask = np.asarray(mask, dtype=np.uint8).copy()
    empty = np.flatnonzero(mask.sum(axis=1) == 0)
    for row in empty:
        mask[row, rng.integers(mask.shape[1])] = 1
    return mask


def apply_mask(table: Table, mask: np.ndarray) -> Table:
    """Hide table cells where mask == 0; mask may not claim cells the table
    does not have. Returns a new table, the input is untouched."""
    mask = np.asarray(mask, dtype=np.uint8)
    if mask.shape != table.values.shape:
        raise ShapeError(
            f"mask shape {mask.shape} != table shape {table.values.shape}")
    if np.any((mask == 1) & (table.observed == 0)):
        raise MaskError("mask marks cells observed that the table is missing")
    observed = table.observed & mask
    values = np.where(observed == 1, table.values, np.nan)
    return Table(list(table.schema), values, observed)


def save_mask_csv(mask: np.ndarray, column_names: list[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(column_names)
        for row in np.asarray(mask, dtype=int):
            writer.writerow(row.tolist())


def load_mask_csv(path, expected_columns: list[str] | None = None) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if expected_columns is not None and header != list(expected_columns):
        raise MaskError(f"mask header {header} does not match data columns")
    try:
        mask = np.array([[int(c) for c in row] for row in rows], dtype=np.uint8)
    except ValueError as exc:
        raise MaskError(f"mask file {path} has non-integer cells: {exc}") from None
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise MaskError(f"mask file {path} must contain only 0/1 values")
    return mask


def save_sidecar(meta: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
