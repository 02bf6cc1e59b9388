"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``code`` so callers (and the
CLI exit-code mapping) do not have to parse messages.
"""


class ListLiftError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ValidationError(ListLiftError):
    """A candidate list or config violates an invariant."""

    code = "validation-error"


class ShapeError(ListLiftError):
    """Array shapes or dimensions are inconsistent."""

    code = "shape-mismatch"


class DegenerateInputError(ListLiftError):
    """The requested statistic is undefined for this input."""

    code = "degenerate-input"


class DatasetFormatError(ListLiftError):
    """A dataset file could not be parsed or validated."""

    code = "parse-error"

    def __init__(self, message, line=None, code=None):
        super().__init__(message, code=code)
        self.line = line


class CheckpointFormatError(ListLiftError):
    """A checkpoint file is truncated, corrupt, or of an unknown version."""

    code = "checkpoint-error"


class DivergenceError(ListLiftError):
    """Training produced a non-finite loss."""

    code = "non-finite-loss"
