"""Exception types shared across the package.

Plain argument/shape violations raise :class:`ValueError` and numeric
violations (NaN/inf where finite values are required) raise
:class:`FloatingPointError`; only failures that callers plausibly want to
catch as a category get their own class here.
"""


class CastError(Exception):
    """Base class for errors raised by this package."""


class ImageDecodeError(CastError):
    """An image file exists but cannot be decoded."""


class ConfigError(CastError):
    """Invalid or inconsistent run configuration (corpora, flags, files)."""


class CheckpointError(CastError):
    """A checkpoint directory is missing, corrupt, or version-incompatible."""


class NonFiniteLossError(CastError):
    """A training loss term became NaN or infinite.

    Carries the name of the offending term and the step index so the abort
    message identifies what diverged.
    """

    def __init__(self, term: str, step: int, value: float):
        self.term = term
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss term '{term}' at step {step}: {value}")
