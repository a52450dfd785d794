"""Exception hierarchy.

Every error raised by the package derives from :class:`OffroadError`. The two
intermediate classes decide the CLI exit code: :class:`DataError` (3) for bad
or inconsistent inputs, :class:`NumericalError` (4) for numerically degenerate
problems.
"""


class OffroadError(Exception):
    pass


class DataError(OffroadError):
    pass


class NumericalError(OffroadError):
    pass


class OutOfBounds(DataError):
    """A query or vehicle footprint left the elevation map."""


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTrajectory(DataError):
    pass


class EmptyDataset(DataError):
    pass


class InsufficientCoverage(DataError):
    """A raw log channel does not cover the resampling window densely enough."""


class ConfigInvalid(DataError):
    pass


class NonPhysicalParams(DataError):
    pass


class FormatError(DataError):
    """A file did not parse as the expected format or version."""


class DegenerateFeature(NumericalError):
    """A fitted feature has (near) zero variance."""


class InsufficientPoints(NumericalError):
    pass


class SingularFit(NumericalError):
    pass


class Diverged(NumericalError):
    """Training produced a non-finite loss."""
