"""Shared exception types.

Kept deliberately small: callers distinguish error categories, messages
carry the specifics (line numbers, attribute names, offending terms).
"""


class ShapeError(ValueError):
    """Tensor/array shape does not match the operation's contract."""


class DomainError(ValueError):
    """Input values fall outside the mathematically valid domain."""


class ConfigError(ValueError):
    """A configuration value violates its invariants."""


class AttributeParseError(ValueError):
    """Attribute-list file is malformed; message names the line."""


class DatasetError(ValueError):
    """Dataset contents cannot support the requested operation."""


class MetricError(ValueError):
    """Metric inputs are degenerate (e.g. zero-norm feature rows)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is missing, corrupt, or incompatible."""


class TrainingDivergedError(RuntimeError):
    """A loss term became non-finite during training."""
