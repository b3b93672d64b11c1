"""Exception hierarchy.

Each class carries the process exit code the command line maps it to:
2 for usage/configuration problems, 3 for bad data, 4 for numerical
accuracy or band-separability failures.
"""


class PhotostatError(Exception):
    exit_code = 3


class ConfigError(PhotostatError, ValueError):
    """Invalid parameters, windows, bin widths or config files."""

    exit_code = 2


class ValidationError(ConfigError):
    """An in-memory object violates its invariants."""


class SizeError(ConfigError):
    pass


class NoSignalError(ConfigError):
    pass


class FormatError(PhotostatError):
    """Unreadable PTAG file (bad magic, version, truncation)."""


class CorruptionError(FormatError):
    pass


class TimestampRangeError(FormatError):
    pass


class DomainError(PhotostatError, ValueError):
    pass


class DegenerateSpectrumError(DomainError):
    pass


class AlignmentError(PhotostatError):
    pass


class MeanFieldBiasError(PhotostatError):
    pass


class AccuracyError(PhotostatError):
    exit_code = 4


class AliasingError(AccuracyError):
    pass


class SeparabilityError(AccuracyError):
    pass
