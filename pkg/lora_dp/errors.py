"""
Exception hierarchy for the lab.

Library code raises these; the CLI is the only place that turns them into
exit codes and one-line diagnostics.
"""


class LabError(Exception):
    """Base class for every data or runtime failure raised by lora_dp."""


class DataFormatError(LabError):
    """Input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(LabError):
    """Index, rank or shape outside the valid range."""


class PreconditionError(LabError):
    """An operation was called outside its documented domain."""


class SvdConvergenceError(LabError):
    """The SVD backend did not converge; carries the tolerance it reached."""

    def __init__(self, message, tolerance=float("inf")):
        self.tolerance = tolerance
        super().__init__(f"{message} (achieved tolerance {tolerance:.3g})")


class ColdUserError(LabError):
    """The user's row of the rank-k approximation is zero."""


class EmptyFilterError(LabError):
    """A singular-value threshold removed every component."""
