"""Error taxonomy shared across the package.

DataError covers everything a caller can fix: malformed input files,
inconsistent cohorts, infeasible configuration. InvariantError means the
library itself broke one of its own guarantees and should abort loudly.
"""


class DataError(Exception):
    """Invalid or inconsistent input data / configuration."""


class FormatError(DataError):
    """Malformed file content. Carries the offending line number when known."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class InvariantError(AssertionError):
    """Internal invariant breach. Never catch this to continue."""
