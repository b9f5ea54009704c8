"""Exception hierarchy shared across the toolkit.

Exit codes follow the CLI contract: 1 for usage/config problems, 2 for
data or file-format problems, 3 for numeric failures.
"""


class AaiError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(AaiError):
    """Invalid configuration, parameters, or usage."""

    exit_code = 1


class ShapeError(AaiError):
    """Tensor or sequence dimensions violate an operation's contract."""

    exit_code = 1


class DataFormatError(AaiError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class BadMagicError(DataFormatError):
    """File does not start with the expected magic bytes."""


class FormatVersionError(DataFormatError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(DataFormatError):
    """File ends before the declared payload is complete."""


class RegistryConflictError(DataFormatError):
    """Declared feature dimension contradicts the feature registry."""


class MisalignmentError(DataFormatError):
    """Paired feature/target streams differ in length beyond tolerance."""


class InputTooShortError(DataFormatError):
    """Input has too few samples or frames for the operation."""


class DegenerateBatchError(DataFormatError):
    """Batch contains no valid frames."""


class NumericError(AaiError):
    """Non-finite values or a failed numeric computation."""

    exit_code = 3
