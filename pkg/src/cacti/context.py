"""Per-column context embeddings: loading, validation, schema alignment.

The file format is JSON produced by the companion embedding generator:

    {"model": "<encoder name>", "dim": <int>, "columns": {"<name>": [floats]}}

Vectors are validated strictly (exact dimension, finite entries, no
duplicate keys). Context is optional at the pipeline level: running without
it puts the model in its no-context mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import ColumnSchema
from .errors import CoverageError, FormatError


@dataclass
class ContextEmbeddings:
    model_name: str
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise FormatError(f"embedding dim must be >= 1, got {self.dim}")
        for name, vec in self.vectors.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise FormatError(
                    f"column {name!r}: vector length {vec.shape} != dim {self.dim}")
            if not np.all(np.isfinite(vec)):
                raise FormatError(f"column {name!r}: non-finite embedding entry")
            self.vectors[name] = vec


def _reject_duplicate_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise FormatError(f"duplicate key {key!r} in context file")
        seen[key] = value
    return seen


def load_context(path) -> ContextEmbeddings:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh, object_pairs_hook=_reject_duplicate_keys)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    for key in ("model", "dim", "columns"):
        if key not in data:
            raise FormatError(f"{path}: missing required key {key!r}")
    columns = data["columns"]
    if not isinstance(columns, dict):
        raise FormatError(f"{path}: 'columns' must be an object")
    vectors = {}
    for name, vec in columns.items():
        if not isinstance(vec, list) or not all(
                isinstance(v, (int, float)) and math.isfinite(v) for v in vec):
            raise FormatError(f"column {name!r}: vector must be a list of finite numbers")
        vectors[name] = np.asarray(vec, dtype=np.float64)
    return ContextEmbeddings(str(data["model"]), int(data["dim"]), vectors)


def save_context(emb: ContextEmbeddings, path) -> None:
    payload = {
        "model": emb.model_name,
        "dim": emb.dim,
        "columns": {name: vec.tolist() for name, vec in emb.vectors.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def align_to_schema(emb: ContextEmbeddings, schema: list[ColumnSchema],
                    allow_missing: bool = False) -> np.ndarray:
    """Stack vectors into a (K, dim) matrix following schema column order.

    Absent columns are an error unless `allow_missing`, which substitutes
    zero vectors (opt-in, to keep silent context loss impossible).
    """
    missing = [c.name for c in schema if c.name not in emb.vectors]
    if missing and not allow_missing:
        raise CoverageError(
            "context embeddings missing column(s): " + ", ".join(missing))
    out = np.zeros((len(schema), emb.dim))
    for i, col in enumerate(schema):
        vec = emb.vectors.get(col.name)
        if vec is not None:
            out[i] = vec
    return out
