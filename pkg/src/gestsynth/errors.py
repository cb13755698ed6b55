"""Exception types mapped to CLI exit codes."""


class GestsynthError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class UsageError(GestsynthError):
    """Invalid arguments or configuration (exit code 2)."""

    exit_code = 2


class DataError(GestsynthError):
    """Malformed, inconsistent, or missing input data (exit code 3)."""

    exit_code = 3


class NumericError(GestsynthError):
    """Numerical failure such as a non-finite loss or a non-PSD matrix (exit code 4)."""

    exit_code = 4
