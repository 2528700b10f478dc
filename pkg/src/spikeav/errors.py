"""Exception types shared across the package."""


class SpikeavError(Exception):
    """Base class for package errors."""


class DimensionError(SpikeavError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class SpikeValueError(SpikeavError, ValueError):
    """A spike tensor was handed values outside {0, 1}."""


class StaleTapeError(SpikeavError, RuntimeError):
    """backward() called on a tape that was already consumed or never used."""


class StateError(SpikeavError, RuntimeError):
    """Operation attempted in an invalid lifecycle state (e.g. mode change
    while a forward pass is running)."""


class AlignmentError(SpikeavError, ValueError):
    """Modality streams disagree on the shared timestep axis."""


class ContractError(SpikeavError, ValueError):
    """A documented call contract was violated (bad mask, missing cue,
    counting in train mode, ...)."""


class EmptyInputError(SpikeavError, ValueError):
    """An input stream or waveform contains no data."""


class DegenerateInputError(SpikeavError, ValueError):
    """Input is degenerate for the requested operation (e.g. zero power)."""


class ConfigError(SpikeavError, ValueError):
    """Invalid configuration value or inconsistent configuration."""


class NumericError(SpikeavError, RuntimeError):
    """Non-finite values encountered where finite numbers are required."""


class CheckpointError(SpikeavError, RuntimeError):
    """Checkpoint file is malformed or incompatible with the model."""
