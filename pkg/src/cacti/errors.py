"""Exception types shared across the package.

Every failure the library raises on purpose derives from CactiError so the
CLI can map them to exit codes without pattern-matching messages.
"""


class CactiError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CactiError):
    """Malformed input file (CSV row length, bad token, bad JSON)."""


class SchemaError(CactiError):
    """Column typing or schema consistency violation."""


class ShapeError(CactiError):
    """Array or table shape mismatch."""


class MaskError(CactiError):
    """A mask claims a value where the table has none, or is malformed."""


class SimulationError(CactiError):
    """Missingness simulator failed (e.g. intercept calibration diverged)."""


class FormatError(CactiError):
    """Context-embedding file violates its schema."""


class CoverageError(CactiError):
    """Context embeddings do not cover every schema column."""


class ConfigError(CactiError):
    """Invalid model/training/benchmark configuration."""


class CheckpointError(CactiError):
    """Checkpoint unreadable or incompatible with the data schema."""


class NumericError(CactiError):
    """Non-finite value encountered during model evaluation or training."""


class MetricError(CactiError):
    """Metric undefined for the given inputs (e.g. no eligible column)."""
