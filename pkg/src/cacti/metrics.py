"""Imputation quality metrics and the mean-imputer baseline.

All metrics read only the evaluation positions (cells hidden by simulation
whose truth is known). R-squared is per-column squared Pearson correlation,
defined as 0 when either side is constant, then averaged over eligible
columns; RMSE pools residuals after a per-column transform (standardized by
default); Wasserstein distance is the exact 1-D earth-mover distance per
column on the original scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import ScalerState, Table
from .errors import MetricError, ShapeError

RMSE_SCALES = ("standardized", "original", "minmax")
_MIN_EVAL = 2  # columns with fewer eval cells are skipped everywhere


@dataclass
class MetricsReport:
    per_column: dict[str, dict] = field(default_factory=dict)
    r2_mean: float = float("nan")
    rmse: float = float("nan")
    wd_mean: float = float("nan")
    rmse_scale: str = "standardized"
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_column": self.per_column,
            "aggregates": {"r2_mean": self.r2_mean, "rmse": self.rmse,
                           "wd_mean": self.wd_mean},
            "scales": {"r2": "scale-free", "rmse": self.rmse_scale,
                       "wd": "original"},
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def format_text(self) -> str:
        lines = [f"{'column':<20} {'n_eval':>6} {'r2':>8} {'rmse':>10} {'wd':>10}"]
        for name, row in self.per_column.items():
            r2 = "-" if row["r2"] is None else f"{row['r2']:.4f}"
            wd = "-" if row["wd"] is None else f"{row['wd']:.4f}"
            rm = "-" if row["rmse"] is None else f"{row['rmse']:.4f}"
            lines.append(f"{name:<20} {row['n_eval']:>6} {r2:>8} {rm:>10} {wd:>10}")
        lines.append(
            f"{'MEAN':<20} {'':>6} {self.r2_mean:>8.4f} {self.rmse:>10.4f} "
            f"{self.wd_mean:>10.4f}")
        return "\n".join(lines)


def _eval_columns(truth: np.ndarray, eval_mask: np.ndarray):
    if truth.shape != eval_mask.shape:
        raise ShapeError("truth and eval mask shapes differ")
    for j in range(truth.shape[1]):
        cells = np.flatnonzero(eval_mask[:, j] == 1)
        yield j, cells


def r_squared(truth: np.ndarray, imputed: np.ndarray,
              eval_mask: np.ndarray) -> tuple[dict[int, float], float]:
    """Squared Pearson correlation per column over evaluation cells; 0 when
    either side has zero variance (a constant imputer scores 0 by fiat)."""
    if truth.shape != imputed.shape:
        raise ShapeError("truth and imputed shapes differ")
    per_col: dict[int, float] = {}
    for j, cells in _eval_columns(truth, eval_mask):
        if cells.size < _MIN_EVAL:
            continue
        t = truth[cells, j]
        p = imputed[cells, j]
        # constant on either side (e.g. a mean imputer) scores exactly 0
        if t.min() == t.max() or p.min() == p.max():
            per_col[j] = 0.0
            continue
        t_sd = t.std()
        p_sd = p.std()
        if t_sd == 0 or p_sd == 0:
            per_col[j] = 0.0
            continue
        r = float(np.mean((t - t.mean()) * (p - p.mean())) / (t_sd * p_sd))
        per_col[j] = min(1.0, r * r)
    if not per_col:
        raise MetricError("no column has enough evaluation cells for R^2")
    return per_col, float(np.mean(list(per_col.values())))


def rmse(truth: np.ndarray, imputed: np.ndarray, eval_mask: np.ndarray,
         scale: str = "standardized",
         scaler: ScalerState | None = None) -> float:
    """Pooled root-mean-square error over evaluation cells after a
    per-column transform: `standardized` divides by the full truth-column
    standard deviation, `original` keeps raw units, `minmax` applies the
    train-fitted scaler. Zero-variance columns are skipped under
    `standardized`."""
    if scale not in RMSE_SCALES:
        raise ValueError(f"scale must be one of {RMSE_SCALES}")
    if scale == "minmax" and scaler is None:
        raise ValueError("minmax scale needs the train scaler")
    sq_sum = 0.0
    count = 0
    for j, cells in _eval_columns(truth, eval_mask):
        if cells.size == 0:
            continue
        diff = imputed[cells, j] - truth[cells, j]
        if scale == "standardized":
            col = truth[:, j]
            sd = col[~np.isnan(col)].std()
            if sd == 0:
                continue
            diff = diff / sd
        elif scale == "minmax":
            span = scaler.spans[j]
            diff = diff / (span if span > 0 else 1.0)
        sq_sum += float(np.sum(diff * diff))
        count += cells.size
    if count == 0:
        raise MetricError("no evaluation cells for RMSE")
    return math.sqrt(sq_sum / count)


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact first Wasserstein distance between two 1-D samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("Wasserstein distance needs nonempty samples")
    return kernels.wasserstein_merge(np.sort(a), np.sort(b))


def wd_metric(truth: np.ndarray, imputed: np.ndarray,
              eval_mask: np.ndarray) -> tuple[dict[int, float], float]:
    """Per-column W1 between true and imputed values at evaluation cells
    (original scale), averaged over eligible columns."""
    per_col: dict[int, float] = {}
    for j, cells in _eval_columns(truth, eval_mask):
        if cells.size < _MIN_EVAL:
            continue
        per_col[j] = wasserstein_1d(truth[cells, j], imputed[cells, j])
    if not per_col:
        raise MetricError("no column has enough evaluation cells for WD")
    return per_col, float(np.mean(list(per_col.values())))


def evaluate(truth: Table, imputed: Table, eval_mask: np.ndarray,
             rmse_scale: str = "standardized",
             scaler: ScalerState | None = None) -> MetricsReport:
    """Full report for an imputation run. `eval_mask` marks the cells to
    score with 1 (simulated-missing positions whose truth is known)."""
    eval_mask = np.asarray(eval_mask, dtype=np.uint8)
    if np.any((eval_mask == 1) & (truth.observed == 0)):
        raise MetricError("evaluation cells must have known truth")
    r2_cols, r2_mean = r_squared(truth.values, imputed.values, eval_mask)
    wd_cols, wd_mean = wd_metric(truth.values, imputed.values, eval_mask)
    pooled_rmse = rmse(truth.values, imputed.values, eval_mask, rmse_scale, scaler)
    report = MetricsReport(rmse_scale=rmse_scale)
    for j, col in enumerate(truth.schema):
        n_eval = int(eval_mask[:, j].sum())
        cells = np.flatnonzero(eval_mask[:, j] == 1)
        col_rmse = None
        if cells.size:
            diff = imputed.values[cells, j] - truth.values[cells, j]
            col_rmse = float(np.sqrt(np.mean(diff * diff)))
        report.per_column[col.name] = {
            "n_eval": n_eval,
            "r2": r2_cols.get(j),
            "rmse": col_rmse,
            "wd": wd_cols.get(j),
        }
    report.r2_mean = r2_mean
    report.rmse = pooled_rmse
    report.wd_mean = wd_mean
    report.notes = {
        "r2": "per-column squared Pearson over eval cells, 0 for constant sides",
        "rmse": f"pooled over eval cells, per-column {rmse_scale} transform",
        "wd": "per-column exact W1 on original scale, averaged",
        "per_column_rmse_scale": "original",
    }
    return report


def mean_impute(table: Table) -> Table:
    """Column-mean baseline: every missing cell takes its column's observed
    mean (categorical codes included, unrounded)."""
    counts = table.observed.sum(axis=0)
    if np.any(counts == 0):
        bad = [table.schema[j].name for j in np.flatnonzero(counts == 0)]
        raise ValueError(f"cannot mean-impute fully-missing column(s): {bad}")
    means = np.nanmean(table.values, axis=0)
    values = np.where(table.observed == 1, table.values,
                      means[None, :])
    return Table(list(table.schema), values,
                 np.ones_like(table.observed, dtype=np.uint8))


def mean_impute_with(table: Table, means: np.ndarray) -> Table:
    """Mean imputation with externally fitted column means (train split
    statistics applied to a held-out split)."""
    if means.shape[0] != table.n_cols:
        raise ShapeError("means length does not match table columns")
    if np.any(np.isnan(means)):
        raise ValueError("means contain NaN")
    values = np.where(table.observed == 1, table.values, means[None, :])
    return Table(list(table.schema), values,
                 np.ones_like(table.observed, dtype=np.uint8))


def column_means(table: Table) -> np.ndarray:
    counts = table.observed.sum(axis=0)
    if np.any(counts == 0):
        bad = [table.schema[j].name for j in np.flatnonzero(counts == 0)]
        raise ValueError(f"fully-missing column(s): {bad}")
    return np.nanmean(table.values, axis=0)


# ---------------------------------------------------------------------------
# paired one-sided t test (upper tail), self-contained Student-t CDF


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta function."""
    max_iter = 300
    eps = 3e-14
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise MetricError("incomplete beta continued fraction did not converge")


def _betainc_reg(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, dof: int) -> float:
    """Upper-tail probability P(T >= t) for Student's t with `dof` degrees
    of freedom (absolute error well under 1e-8)."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    x = dof / (dof + t * t)
    tail = 0.5 * _betainc_reg(dof / 2.0, 0.5, x)
    return tail if t >= 0 else 1.0 - tail


def paired_t_test_one_sided(a, b) -> tuple[float, float]:
    """Upper-tail paired t test of mean(a - b) > 0; returns (t, p)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("paired samples must be 1-D and equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise MetricError("paired t test degenerate: all differences equal")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, student_t_sf(t, n - 1)
