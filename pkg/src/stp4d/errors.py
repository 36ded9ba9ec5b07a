"""Exception types shared across the package."""


class Stp4dError(Exception):
    """Base class for all package errors."""


class ConfigError(Stp4dError, ValueError):
    """Invalid configuration value or inconsistent config combination."""


class DimensionError(Stp4dError, ValueError):
    """Tensor shape does not match an operation's contract."""


class LayoutError(Stp4dError, ValueError):
    """Token/grid layout mismatch (flatten/unflatten, grid vs. window)."""


class EncoderError(Stp4dError, RuntimeError):
    """Text/image encoder failure: missing file, bad dimension, unreachable service."""


class FusionError(Stp4dError, ValueError):
    """Non-finite loss component passed to the loss fusion."""


class ProbeError(Stp4dError, RuntimeError):
    """Gradient-check probe produced a non-finite loss."""


class CheckpointError(Stp4dError, RuntimeError):
    """Checkpoint file malformed or incompatible with the current model."""


class DatasetError(Stp4dError, RuntimeError):
    """Dataset root unusable (empty after validation, missing directories)."""


class NormalizationError(Stp4dError, ValueError):
    """Quaternion (or embedding) with zero norm cannot be normalized."""
