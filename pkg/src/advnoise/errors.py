"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment, model, or attack configuration."""


class AttackError(RuntimeError):
    """Attack failed in a way that is a bug, not a reported outcome
    (e.g. non-finite gradients or scores)."""


class TrainingError(RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed, truncated, or version-incompatible."""


class DataFormatError(ValueError):
    """Dataset file violates its declared format."""
