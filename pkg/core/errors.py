"""
Error hierarchy shared by every polyland module.

PreconditionError and its subclasses map to exit code 2,
InternalInconsistencyError to exit code 1.
"""


class PolylandError(Exception):
    """Root of all polyland errors."""


class PreconditionError(PolylandError, ValueError):
    """An operation was called outside its documented domain."""


class ShapeError(PreconditionError):
    """Dimension or degree mismatch."""


class SchemaError(PreconditionError):
    """Malformed input document or foreign schema tag."""


class DegenerateTeacherError(PreconditionError):
    """Teacher violates a genericity hypothesis (repeated eigenvalues, rank deficiency)."""


class NonGenericSegmentError(PreconditionError):
    """Two eigenvalues coincide along the whole segment."""


class BaselineDegenerateError(PreconditionError):
    """Stability baseline lies on the discriminant."""


class InternalInconsistencyError(PolylandError, RuntimeError):
    """A guarantee that should hold under the checked preconditions failed."""


class PolylandWarning(UserWarning):
    """Soft precondition violations; computation continues."""
