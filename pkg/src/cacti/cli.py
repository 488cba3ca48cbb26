"""Command-line surface: simulate / train / impute / evaluate / benchmark.

Every verb is deterministic given its seed arguments; no call path reads
ambient entropy or the clock (the seed-derivation scheme lives in `rng`).
Errors print one machine-parsable line to stderr and exit nonzero: 2 for
validation problems, 3 for checkpoint/schema mismatches.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import __version__
from .benchmark import BenchmarkConfig, format_results_text, run_benchmark
from .context import align_to_schema, load_context
from .dataset import (Table, apply_scaler, fit_scaler, format_cell, load_csv,
                      load_csv_with_schema, load_schema_hint, schema_digest)
from .errors import CactiError, CheckpointError
from .imputation import impute
from .masking import build_random_batch, build_truncated_batch, naive_copy_mask
from .metrics import evaluate
from .missingness import (SimConfig, apply_mask, load_mask_csv, save_mask_csv,
                          save_sidecar, simulate)
from .model import (CHECKPOINT_VERSION, Checkpoint, ModelConfig,
                    load_checkpoint, save_checkpoint)
from .rng import stream
from .training import TrainConfig, train, write_trace


def _load_table(path, hint_path=None) -> Table:
    hint = load_schema_hint(hint_path) if hint_path else None
    return load_csv(path, hint)


def _load_corrupted(args) -> Table:
    table = _load_table(args.data, getattr(args, "schema_hint", None))
    if getattr(args, "mask", None):
        mask = load_mask_csv(args.mask, table.column_names)
        table = apply_mask(table, mask)
    return table


def _context_matrix(args, schema):
    path = getattr(args, "context", None)
    if not path:
        return None
    emb = load_context(path)
    return align_to_schema(emb, schema,
                           allow_missing=getattr(args, "allow_missing_context", False))


def cmd_simulate(args) -> int:
    table = _load_table(args.data, args.schema_hint)
    if not np.all(table.observed == 1):
        raise ValueError("simulation input must be fully observed")
    cfg = SimConfig(args.mechanism.upper(), args.p_miss, args.p_obs, args.seed)
    mask, meta = simulate(table.values, cfg)
    meta["observed_columns"] = [table.column_names[j]
                                for j in meta["observed_columns"]]
    save_mask_csv(mask, table.column_names, args.out)
    save_sidecar(meta, args.sidecar or (str(args.out) + ".json"))
    print(f"wrote {args.out}: realized rate {meta['realized_rate']['overall']:.4f}")
    return 0


def _train_configs(args, table: Table, ctx_matrix) -> tuple[ModelConfig, TrainConfig]:
    train_fields: dict = {}
    model_fields: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        model_fields = raw.pop("model", {})
        train_fields = raw
    if args.seed is not None:
        train_fields["seed"] = args.seed
    if args.mask_strategy:
        train_fields["mask_strategy"] = args.mask_strategy
    if args.loss_mode:
        train_fields["loss_mode"] = args.loss_mode
    if args.epochs is not None:
        train_fields["epochs"] = args.epochs
    model_fields["n_features"] = table.n_cols
    model_fields["ctx_raw_dim"] = 0 if ctx_matrix is None else ctx_matrix.shape[1]
    return ModelConfig(**model_fields), TrainConfig(**train_fields)


def cmd_train(args) -> int:
    table = _load_corrupted(args)
    ctx_matrix = None if args.no_context else _context_matrix(args, table.schema)
    model_cfg, train_cfg = _train_configs(args, table, ctx_matrix)
    scaler = fit_scaler(table)
    params, trace = train(apply_scaler(table, scaler), ctx_matrix,
                          model_cfg, train_cfg)
    ckpt = Checkpoint(model_cfg, params, scaler, schema_digest(table.schema))
    save_checkpoint(ckpt, args.out)
    if args.trace:
        write_trace(trace, args.trace)
    print(f"trained {train_cfg.epochs} epochs, final loss {trace[-1][1]:.6f}, "
          f"checkpoint {args.out}")
    return 0


def cmd_impute(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    with open(args.data, "r", encoding="utf-8", newline="") as fh:
        raw_rows = list(csv.reader(fh))
    table = _load_corrupted(args)
    ctx_matrix = _context_matrix(args, table.schema)
    if ckpt.config.ctx_raw_dim > 0 and ctx_matrix is None:
        raise ValueError("checkpoint was trained with context; pass --context")
    result = impute(table, ctx_matrix, ckpt,
                    round_categorical=args.round_categorical)
    # observed cells keep their exact input rendering; only filled cells are new
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names)
        for i in range(table.n_rows):
            row = []
            for j in range(table.n_cols):
                if table.observed[i, j] == 1:
                    row.append(raw_rows[i + 1][j])
                else:
                    row.append(format_cell(result.values[i, j], table.schema[j],
                                           decode_categories=args.round_categorical))
            writer.writerow(row)
    print(f"imputed {int((table.observed == 0).sum())} cells -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    truth = _load_table(args.truth, args.schema_hint)
    # share the truth's schema so categorical codes agree across both files
    imputed = load_csv_with_schema(args.imputed, truth.schema)
    if truth.values.shape != imputed.values.shape:
        raise ValueError("truth and imputed tables have different shapes")
    mask = load_mask_csv(args.eval_mask, truth.column_names)
    if mask.shape != truth.values.shape:
        raise ValueError("evaluation mask shape does not match the data")
    eval_cells = ((mask == 0) & (truth.observed == 1)).astype(np.uint8)
    report = evaluate(truth, imputed, eval_cells, args.metrics_scale)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    print(report.format_text())
    return 0


def cmd_benchmark(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = BenchmarkConfig.from_dict(json.load(fh))
    results = run_benchmark(cfg)
    payload = json.dumps(results, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(payload)
            fh.write("\n")
    if args.text or not args.out:
        print(format_results_text(results))
    return 0


def cmd_mask_debug(args) -> int:
    """Dump one masked batch as JSON (golden-test hook)."""
    table = _load_table(args.data, args.schema_hint)
    rng = stream(args.seed, "mask-debug")
    rows = table.observed[:args.batch_size]
    if args.strategy == "random":
        batch = build_random_batch(rows, args.p_cm, rng)
    else:
        copy_mask = naive_copy_mask(rows, args.p_cm, rng)
        batch = build_truncated_batch(rows, copy_mask, rng)
    payload = {
        "strategy": args.strategy,
        "seq_len": batch.seq_len,
        "kept": [k.tolist() for k in batch.kept],
        "masked": [m.tolist() for m in batch.masked],
        "keep_counts": batch.keep_counts.tolist(),
        "pad_counts": batch.pad_counts.tolist(),
    }
    print(json.dumps(payload, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cacti",
        description="Tabular imputation with copy-masked transformer "
                    "autoencoding and column-context awareness.")
    parser.add_argument(
        "--version", action="version",
        version=f"cacti {__version__} (checkpoint format v{CHECKPOINT_VERSION}, "
                f"mask CSV v1, context JSON v1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="simulate a missingness mask")
    p_sim.add_argument("data")
    p_sim.add_argument("--mechanism", required=True,
                       choices=["mcar", "mar", "mnar", "MCAR", "MAR", "MNAR"])
    p_sim.add_argument("--p-miss", type=float, required=True, dest="p_miss")
    p_sim.add_argument("--p-obs", type=float, default=0.3, dest="p_obs")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--sidecar", default=None)
    p_sim.add_argument("--schema-hint", default=None, dest="schema_hint")
    p_sim.set_defaults(func=cmd_simulate)

    p_train = sub.add_parser("train", help="fit an imputation model")
    p_train.add_argument("data")
    p_train.add_argument("--mask", default=None,
                         help="simulated mask CSV to apply before training")
    p_train.add_argument("--context", default=None,
                         help="column context embeddings JSON")
    p_train.add_argument("--no-context", action="store_true", dest="no_context")
    p_train.add_argument("--allow-missing-context", action="store_true",
                         dest="allow_missing_context")
    p_train.add_argument("--config", default=None,
                         help="training config JSON (plus optional 'model' block)")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--mask-strategy", default=None, dest="mask_strategy",
                         choices=["mtcm", "naive_cm", "random"])
    p_train.add_argument("--loss-mode", default=None, dest="loss_mode",
                         choices=["both", "observed", "masked"])
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--trace", default=None, help="loss trace CSV path")
    p_train.add_argument("--schema-hint", default=None, dest="schema_hint")
    p_train.set_defaults(func=cmd_train)

    p_imp = sub.add_parser("impute", help="fill missing cells with a checkpoint")
    p_imp.add_argument("data")
    p_imp.add_argument("checkpoint")
    p_imp.add_argument("--mask", default=None)
    p_imp.add_argument("--context", default=None)
    p_imp.add_argument("--allow-missing-context", action="store_true",
                       dest="allow_missing_context")
    p_imp.add_argument("--out", required=True)
    p_imp.add_argument("--round-categorical", action="store_true",
                       dest="round_categorical")
    p_imp.add_argument("--schema-hint", default=None, dest="schema_hint")
    p_imp.set_defaults(func=cmd_impute)

    p_eval = sub.add_parser("evaluate", help="score an imputation against truth")
    p_eval.add_argument("truth")
    p_eval.add_argument("imputed")
    p_eval.add_argument("eval_mask",
                        help="mask CSV (1=observed); cells with 0 are scored")
    p_eval.add_argument("--metrics-scale", default="standardized",
                        choices=["standardized", "original", "minmax"],
                        dest="metrics_scale")
    p_eval.add_argument("--json", default=None, help="also write a JSON report")
    p_eval.add_argument("--schema-hint", default=None, dest="schema_hint")
    p_eval.set_defaults(func=cmd_evaluate)

    p_bmk = sub.add_parser("benchmark", help="run a method/mechanism grid")
    p_bmk.add_argument("config")
    p_bmk.add_argument("--out", default=None)
    p_bmk.add_argument("--text", action="store_true")
    p_bmk.set_defaults(func=cmd_benchmark)

    p_dbg = sub.add_parser("mask-debug", help="dump one masked batch as JSON")
    p_dbg.add_argument("data")
    p_dbg.add_argument("--strategy", default="mtcm", choices=["mtcm", "random"])
    p_dbg.add_argument("--p-cm", type=float, default=0.9, dest="p_cm")
    p_dbg.add_argument("--seed", type=int, default=0)
    p_dbg.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p_dbg.add_argument("--schema-hint", default=None, dest="schema_hint")
    p_dbg.set_defaults(func=cmd_mask_debug)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"cacti: error: CheckpointError: {exc}", file=sys.stderr)
        return 3
    except (CactiError, ValueError, TypeError, KeyError, FloatingPointError,
            OSError) as exc:
        print(f"cacti: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
