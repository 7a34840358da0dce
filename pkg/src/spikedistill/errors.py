"""Exception hierarchy shared across the package.

Every error raised by spikedistill derives from SpikeDistillError so callers
can catch the whole family.  The CLI maps these onto exit codes (see cli.py).
"""


class SpikeDistillError(Exception):
    """Base class for all spikedistill errors."""


class ShapeError(SpikeDistillError):
    """Tensor extents or layer widths do not line up."""


class NumericError(SpikeDistillError):
    """A value became NaN or infinite where finiteness is required."""


class ConfigError(SpikeDistillError):
    """Invalid configuration: bad weights, window sizes, unknown keys."""


class DataError(SpikeDistillError):
    """Dataset or checkpoint file is missing, malformed or inconsistent."""


class StateError(SpikeDistillError):
    """An operation was used before its state was initialized."""


class TrainingError(SpikeDistillError):
    """Training diverged or a pipeline stage failed."""
