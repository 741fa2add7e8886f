"""Exception hierarchy shared across the package.

The CLI maps each class to a stable one-word category so scripted callers
can branch on failures without parsing prose.
"""


class RayLaplaceError(Exception):
    """Base class for all package errors."""

    category = "error"


class DomainError(RayLaplaceError, ValueError):
    """A numeric argument is outside the documented domain (non-finite, negative, ...)."""

    category = "domain"


class ValidationError(RayLaplaceError, ValueError):
    """An object or argument combination violates a structural invariant."""

    category = "validation"


class PoseError(ValidationError):
    """A camera pose is not a proper rigid transform."""

    category = "pose"


class FormatError(RayLaplaceError, ValueError):
    """A persisted artifact is malformed (bad magic, bad manifest field, ...)."""

    category = "format"


class TruncationError(FormatError):
    """A persisted artifact ends before its declared payload."""

    category = "truncated"


class MissingFileError(RayLaplaceError, FileNotFoundError):
    """A referenced input file does not exist."""

    category = "missing-file"
