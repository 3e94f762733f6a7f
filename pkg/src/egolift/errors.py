"""Exception types raised by the library.

Every error that callers are expected to handle programmatically gets its
own class so it can be caught without string matching.
"""


class EgoliftError(Exception):
    """Base class for all library errors."""


class NearPiRotation(EgoliftError):
    """Rotation angle is within tolerance of pi; the log map is unstable there."""


class DegenerateGravityAlignment(EgoliftError):
    """Camera viewing axis is (anti)parallel to gravity; no horizontal frame exists."""


class NoConvergence(EgoliftError):
    """Iterative inverse failed to converge (typically a corrupt calibration)."""


class MismatchedFeatureDims(EgoliftError):
    """Frames passed to feature lifting disagree on the feature channel count."""


class NonMonotonicTime(EgoliftError):
    """Tracker stepped with a timestamp earlier than the scene state."""


class ShapeMismatch(EgoliftError):
    """Array arguments have inconsistent shapes."""


class VolumeTooSmall(EgoliftError):
    """Volume is too small along some axis for the requested operation."""


class NoValidSamples(EgoliftError):
    """An operation that averages over samples received zero valid samples."""


class EmptyMesh(EgoliftError):
    """A mesh with no faces was passed where a non-empty mesh is required."""


class PlacementFailure(EgoliftError):
    """Rejection sampling could not place scene objects within the attempt cap."""


class ParseError(EgoliftError):
    """A file could not be parsed; the message carries the offending location."""


class VersionMismatch(EgoliftError):
    """A file declares a format version this reader does not understand."""
