"""Exception hierarchy shared across the package."""


class SegScoreError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SegScoreError):
    """An argument or precondition violation (bad value, bad shape, ...)."""


class AnnotationMismatchError(DomainError):
    """An instance annotation disagrees with its class mask."""


class FormatError(SegScoreError):
    """A file could not be read or written in the expected format."""


class InternalError(SegScoreError):
    """An internal invariant was violated; indicates a bug, not bad input."""
