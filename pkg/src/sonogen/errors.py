"""Exception types shared across the package."""


class SonogenError(Exception):
    """Base class for all package errors."""


class ConfigError(SonogenError):
    """A parameter value violates a documented precondition."""


class EmptyReport(SonogenError):
    """A report contains no tokenizable text."""


class EmptyCorpus(SonogenError):
    """An operation that needs at least one report received none."""


class DatasetTooSmall(SonogenError):
    """The dataset has too few records for the requested operation."""


class EmbedderUnavailable(SonogenError):
    """An external embedding provider failed or returned malformed vectors."""


class FitError(SonogenError):
    """A curve fit did not converge."""


class ShapeError(SonogenError):
    """Tensor shapes are incompatible for the requested operation."""


class LabelError(SonogenError):
    """A class label lies outside the valid range."""


class LengthError(SonogenError):
    """A sequence exceeds the configured maximum length."""


class NumericsError(SonogenError):
    """A non-finite value appeared where a finite one is required."""


class DegenerateEmbedding(SonogenError):
    """A reference embedding is the zero vector, so similarity is undefined."""


class PairingError(SonogenError):
    """Candidate and reference lists cannot be paired up."""


class Unsupported(SonogenError):
    """The requested feature is intentionally not implemented."""
