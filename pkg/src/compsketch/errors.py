"""Exception types raised across the toolkit."""


class SketchError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgument(SketchError, ValueError):
    """An argument violates a documented precondition."""


class OutOfDomain(InvalidArgument):
    """A closed form was requested outside the range where it is valid."""


class CorruptFile(SketchError):
    """A file's trailing digest does not match its payload."""


class UnsupportedFormat(SketchError):
    """Bad magic, wrong version or truncated file."""


class IncompatibleSketch(SketchError):
    """Two sketches were built from different frequency sets."""


class EmptySketch(SketchError):
    """Finalization of a sketch that has seen no samples."""


class InfeasibleSeparation(InvalidArgument):
    """Separation and radius constraints cannot be met."""
