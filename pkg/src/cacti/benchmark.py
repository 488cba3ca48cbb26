"""End-to-end benchmark harness: split, simulate, train, impute, evaluate
over a {mechanism x rate x method x seed} grid.

Every random draw descends from one root seed. All methods inside a grid
cell share the same split and simulated mask, so comparisons are paired.
Cells may run in parallel processes (capped by CACTI_THREADS); results are
ordered deterministically regardless of scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .context import align_to_schema, load_context
from .dataset import (Table, apply_scaler, fit_scaler, load_csv,
                      load_schema_hint, schema_digest)
from .errors import ConfigError
from .imputation import impute
from .metrics import column_means, evaluate, mean_impute_with
from .missingness import (MECHANISMS, SimConfig, apply_mask,
                          ensure_row_coverage, simulate)
from .model import Checkpoint, ModelConfig
from .rng import derive_seed, stream
from .training import TrainConfig, train

#: method name -> (mask strategy, uses context); "mean" is special-cased
METHOD_ARMS = {
    "cacti": ("mtcm", True),
    "cmae": ("mtcm", False),
    "cmae_naive": ("naive_cm", False),
    "rmae": ("random", False),
    "rmae_ctx": ("random", True),
}
ABLATION_PRESET = ("rmae", "rmae_ctx", "cmae", "cacti")


@dataclass
class BenchmarkConfig:
    data_path: str
    context_path: str | None = None
    schema_hint_path: str | None = None
    mechanisms: list[str] = field(default_factory=lambda: ["MCAR"])
    p_miss: list[float] = field(default_factory=lambda: [0.3])
    methods: list[str] = field(default_factory=lambda: ["cacti", "mean"])
    n_seeds: int = 1
    root_seed: int = 0
    test_fraction: float = 0.2
    p_obs: float = 0.3
    rmse_scale: str = "standardized"
    round_categorical: bool = False
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        for mech in self.mechanisms:
            if mech not in MECHANISMS:
                raise ConfigError(f"unknown mechanism {mech!r}")
        for m in self.methods:
            if m != "mean" and m not in METHOD_ARMS:
                raise ConfigError(f"unknown method {m!r}; known: "
                                  f"{sorted(METHOD_ARMS)} + ['mean']")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        needs_ctx = any(m != "mean" and METHOD_ARMS[m][1] for m in self.methods)
        if needs_ctx and not self.context_path:
            raise ConfigError(
                "context-aware method requested but no context_path given")

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchmarkConfig":
        raw = dict(raw)
        if raw.pop("preset", None) == "ablation":
            raw.setdefault("methods", list(ABLATION_PRESET))
        return cls(**raw)


def split_indices(n_rows: int, test_fraction: float, seed: int):
    """The shared row partition of `dataset.split_train_test`."""
    n_test = int(round(test_fraction * n_rows))
    if n_test == 0 or n_test == n_rows:
        raise ValueError("test fraction leaves an empty split")
    perm = stream(seed, "split").permutation(n_rows)
    return perm[n_test:], perm[:n_test]


def _model_config_for(table: Table, ctx_raw_dim: int, overrides: dict) -> ModelConfig:
    fields = {"n_features": table.n_cols, "ctx_raw_dim": ctx_raw_dim}
    fields.update(overrides)
    fields["n_features"] = table.n_cols
    fields["ctx_raw_dim"] = ctx_raw_dim
    return ModelConfig(**fields)


def run_cell(truth: Table, ctx_matrix: np.ndarray | None, cfg: BenchmarkConfig,
             mechanism: str, p_miss: float, seed_index: int) -> list[dict]:
    """One grid cell: shared simulation + split, then every method."""
    sim_seed = derive_seed(cfg.root_seed, "sim", mechanism, repr(p_miss), seed_index)
    split_seed = derive_seed(cfg.root_seed, "cut", mechanism, repr(p_miss), seed_index)
    mask, sim_meta = simulate(
        truth.values, SimConfig(mechanism, p_miss, cfg.p_obs, sim_seed))
    mask = ensure_row_coverage(mask, stream(sim_seed, "row-coverage"))
    corrupted = apply_mask(truth, mask)
    train_idx, test_idx = split_indices(truth.n_rows, cfg.test_fraction, split_seed)

    splits = {
        "train": (truth.take_rows(train_idx), corrupted.take_rows(train_idx),
                  (mask[train_idx] == 0).astype(np.uint8)),
        "test": (truth.take_rows(test_idx), corrupted.take_rows(test_idx),
                 (mask[test_idx] == 0).astype(np.uint8)),
    }
    corrupted_train = splits["train"][1]
    scaler = fit_scaler(corrupted_train)

    rows = []
    for method in cfg.methods:
        method_seed = derive_seed(cfg.root_seed, "fit", mechanism, repr(p_miss),
                                  seed_index, method)
        imputations: dict[str, Table] = {}
        if method == "mean":
            means = column_means(corrupted_train)
            for split_name, (_, corr, _) in splits.items():
                imputations[split_name] = mean_impute_with(corr, means)
        else:
            strategy, uses_ctx = METHOD_ARMS[method]
            ctx = ctx_matrix if uses_ctx else None
            ctx_dim = ctx.shape[1] if ctx is not None else 0
            model_cfg = _model_config_for(truth, ctx_dim, cfg.model)
            train_cfg = TrainConfig(**{**cfg.train,
                                       "mask_strategy": strategy,
                                       "seed": method_seed})
            params, _ = train(apply_scaler(corrupted_train, scaler), ctx,
                              model_cfg, train_cfg)
            ckpt = Checkpoint(model_cfg, params, scaler,
                              schema_digest(truth.schema))
            for split_name, (_, corr, _) in splits.items():
                imputations[split_name] = impute(
                    corr, ctx, ckpt, round_categorical=cfg.round_categorical)
        for split_name, (split_truth, _, eval_mask) in splits.items():
            report = evaluate(split_truth, imputations[split_name], eval_mask,
                              cfg.rmse_scale, scaler)
            rows.append({
                "mechanism": mechanism,
                "p_miss": p_miss,
                "method": method,
                "seed_index": seed_index,
                "split": split_name,
                "r2_mean": report.r2_mean,
                "rmse": report.rmse,
                "wd_mean": report.wd_mean,
                "realized_missing_rate": sim_meta["realized_rate"],
            })
    return rows


def _cell_worker(args):
    return run_cell(*args)


def run_benchmark(cfg: BenchmarkConfig) -> dict:
    """Run the full grid; returns {config, runs, aggregates}."""
    hint = load_schema_hint(cfg.schema_hint_path) if cfg.schema_hint_path else None
    truth = load_csv(cfg.data_path, hint)
    if not np.all(truth.observed == 1):
        raise ConfigError("benchmark data must be fully observed ground truth")
    ctx_matrix = None
    if cfg.context_path:
        ctx_matrix = align_to_schema(load_context(cfg.context_path), truth.schema)

    cells = [(truth, ctx_matrix, cfg, mech, p, s)
             for mech in cfg.mechanisms
             for p in cfg.p_miss
             for s in range(cfg.n_seeds)]
    threads = max(1, int(os.environ.get("CACTI_THREADS", "1")))
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cell_rows = list(pool.map(_cell_worker, cells))
    else:
        cell_rows = [run_cell(*cell) for cell in cells]
    runs = [row for rows in cell_rows for row in rows]
    runs.sort(key=lambda r: (r["mechanism"], r["p_miss"], r["method"],
                             r["split"], r["seed_index"]))

    aggregates = []
    keys = sorted({(r["mechanism"], r["p_miss"], r["method"], r["split"])
                   for r in runs})
    for mech, p, method, split_name in keys:
        group = [r for r in runs if (r["mechanism"], r["p_miss"], r["method"],
                                     r["split"]) == (mech, p, method, split_name)]
        aggregates.append({
            "mechanism": mech, "p_miss": p, "method": method, "split": split_name,
            "n_seeds": len(group),
            "r2_mean": float(np.mean([g["r2_mean"] for g in group])),
            "rmse": float(np.mean([g["rmse"] for g in group])),
            "wd_mean": float(np.mean([g["wd_mean"] for g in group])),
        })
    return {"config": asdict(cfg), "runs": runs, "aggregates": aggregates}


def format_results_text(results: dict) -> str:
    header = (f"{'mechanism':<10} {'p_miss':>6} {'method':<12} {'split':<6} "
              f"{'r2':>8} {'rmse':>8} {'wd':>8}")
    lines = [header, "-" * len(header)]
    for agg in results["aggregates"]:
        lines.append(
            f"{agg['mechanism']:<10} {agg['p_miss']:>6} {agg['method']:<12} "
            f"{agg['split']:<6} {agg['r2_mean']:>8.4f} {agg['rmse']:>8.4f} "
            f"{agg['wd_mean']:>8.4f}")
    return "\n".join(lines)
