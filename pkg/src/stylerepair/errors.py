"""Exception types raised across the package."""


class StyleRepairError(Exception):
    """Base class for all package errors."""


class DatasetLoadError(StyleRepairError):
    """A dataset file is missing, unreadable or malformed."""


class ValidationError(StyleRepairError, ValueError):
    """Input data violates a documented invariant."""


class UnsupportedCorruptionError(StyleRepairError):
    """The corruption kind cannot be synthesized and no ingested data was found."""


class ConfigurationError(StyleRepairError, ValueError):
    pass


class ParameterError(StyleRepairError, ValueError):
    pass


class EmptyFailureError(StyleRepairError):
    """The model made no mistakes on the corrupted set, so there is nothing to repair."""


class BackendUnavailableError(StyleRepairError):
    """A style backend needs an asset that is not present."""


class CheckpointError(StyleRepairError):
    pass


class DivergenceError(StyleRepairError):
    """Training produced a non-finite loss."""


class ConfigDriftError(ValidationError):
    """Two ablation arms differ in more than the sampler strategy."""

    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__("ablation arms differ in: " + ", ".join(self.keys))


class StageError(StyleRepairError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
