"""Exception types shared across the package."""


class AmpError(Exception):
    """Base class for all errors raised by ampseg."""


class ShapeError(AmpError, ValueError):
    """Array dimensions do not agree with an operation's contract."""


class ZeroVectorError(AmpError, ValueError):
    """A vector is too close to zero to be normalized."""


class EmptyMaskError(AmpError, ValueError):
    """A mask selects no pixels (its weights sum to zero)."""


class FormatError(AmpError, ValueError):
    """A binary file could not be parsed.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
