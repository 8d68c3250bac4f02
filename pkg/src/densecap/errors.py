"""Exception hierarchy shared by every pipeline stage.

The CLI maps these onto exit codes: ConfigError -> 3, DataError (and its
subclasses) -> 2, anything else -> 1.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PipelineError):
    """A configuration value is invalid or inconsistent."""


class DataError(PipelineError):
    """Input data violates a documented contract (bad manifest, missing file, ...)."""


class FormatError(DataError):
    """A binary or JSON artifact does not parse; carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(PipelineError):
    """A numeric computation produced non-finite values (training diverged)."""
