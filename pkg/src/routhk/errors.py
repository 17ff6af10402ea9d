"""Exception types shared across the package."""


class RouthkError(Exception):
    """Base class for all routhk errors."""


class NumericalFailure(RouthkError):
    """A derivative or function evaluation produced a non-finite value."""


class SingularMatrix(RouthkError):
    """A dense solve hit a pivot below the singularity threshold."""


class GridError(RouthkError):
    """A grid is too small or a field does not match its grid."""


class BasePointMismatch(RouthkError):
    """A pairing was attempted between objects at different base points."""


class NewtonDivergence(RouthkError):
    """A Newton solve failed to converge (e.g. G-regularity failure)."""


class InconsistentConstraints(RouthkError):
    """Reconstruction was refused because the constraints are not flat."""


class UnknownExample(RouthkError):
    """The requested example name is not in the registry."""


class InvalidParameters(RouthkError):
    """Example parameters violate a registered validity constraint."""
