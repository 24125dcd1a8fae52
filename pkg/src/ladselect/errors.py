"""Exception hierarchy shared by every ladselect module."""


class LadError(Exception):
    """Base class for all errors raised by ladselect."""


class LadValidationError(LadError, ValueError):
    """Input violates a documented invariant (bad shape, non-finite cell, ...)."""


class LadFormatError(LadValidationError):
    """A file could not be parsed (ragged rows, bad JSON layout)."""


class LadSizeError(LadValidationError):
    """Input is too small for the requested computation."""


class LadNumericalError(LadError, ArithmeticError):
    """A numerical routine failed (e.g. Cholesky after the jitter budget)."""
