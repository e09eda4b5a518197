"""Exception types raised across the package."""


class ShapeExtrapError(Exception):
    """Base class for all package errors."""


class MeshError(ShapeExtrapError, ValueError):
    """Invalid mesh data (bad indices, degenerate triangles)."""


class TopologyMismatchError(ShapeExtrapError, ValueError):
    """Two meshes that must share connectivity do not."""


class PartitionError(ShapeExtrapError, ValueError):
    """A known/unknown split that leaves nothing to extrapolate or nothing known."""


class RankDeficiencyError(ShapeExtrapError, ValueError):
    """A linear system or point set is (numerically) rank deficient."""


class FormatError(ShapeExtrapError, ValueError):
    """Malformed file content. ``location`` names the offending line or byte offset."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class TruncatedPayloadError(FormatError):
    pass


class NonTriangleFaceError(FormatError):
    pass


class IndexOutOfRangeError(FormatError):
    pass


class HeaderError(FormatError):
    pass
