"""Tabular imputation via copy-masked transformer autoencoding with
column-context awareness, plus the simulation and evaluation harness
around it."""

__version__ = "0.1.0"

from .dataset import (ColumnSchema, ScalerState, Table, apply_scaler,
                      fit_scaler, load_csv, save_csv, schema_digest,
                      split_train_test, unscale_values)
from .masking import (CopyMaskConfig, MaskedBatch, build_random_batch,
                      build_truncated_batch, build_untruncated_batch,
                      naive_copy_mask)
from .missingness import (SimConfig, apply_mask, simulate, simulate_mar,
                          simulate_mcar, simulate_mnar)
from .model import (Checkpoint, ModelConfig, init_params, load_checkpoint,
                    positional_table, save_checkpoint)
from .training import TrainConfig, lr_at, train
from .imputation import impute, impute_out_of_sample
from .metrics import (MetricsReport, evaluate, mean_impute,
                      paired_t_test_one_sided, r_squared, rmse, wasserstein_1d)
from .context import ContextEmbeddings, align_to_schema, load_context

__all__ = [
    "__version__",
    "ColumnSchema", "ScalerState", "Table", "apply_scaler", "fit_scaler",
    "load_csv", "save_csv", "schema_digest", "split_train_test",
    "unscale_values",
    "CopyMaskConfig", "MaskedBatch", "build_random_batch",
    "build_truncated_batch", "build_untruncated_batch", "naive_copy_mask",
    "SimConfig", "apply_mask", "simulate", "simulate_mar", "simulate_mcar",
    "simulate_mnar",
    "Checkpoint", "ModelConfig", "init_params", "load_checkpoint",
    "positional_table", "save_checkpoint",
    "TrainConfig", "lr_at", "train",
    "impute", "impute_out_of_sample",
    "MetricsReport", "evaluate", "mean_impute", "paired_t_test_one_sided",
    "r_squared", "rmse", "wasserstein_1d",
    "ContextEmbeddings", "align_to_schema", "load_context",
]
