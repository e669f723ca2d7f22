"""Exception hierarchy shared across the simulator."""


class OccLocateError(Exception):
    """Base class for all library errors."""


class DomainError(OccLocateError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


# camera model
class BehindCamera(OccLocateError):
    """The point has non-positive depth in the camera frame."""


# link layer
class SyncLost(OccLocateError):
    """The frame preamble was not found within the search window."""


class DecodeFailure(OccLocateError):
    """A sampled packet failed Manchester or CRC validation."""


# geolocation
class RangeUnresolvable(OccLocateError):
    """The beacon covers less than one pixel, so no distance can be derived."""


class NoRealSolution(OccLocateError):
    """The measured distances admit no real intersection."""


class DegenerateBeacons(OccLocateError):
    """Anchor geometry cannot determine a position (coincident anchors)."""


class SingularNormalEquations(OccLocateError):
    """The least-squares normal matrix is numerically singular."""


class NoValidCandidate(OccLocateError):
    """Every candidate violates the floor/ceiling constraint."""


class SingularInnovation(OccLocateError):
    """The Kalman innovation covariance cannot be inverted."""


class InsufficientBeacons(OccLocateError):
    """Fewer than three beacons are visible."""


# vehicle scheme
class GeometryInconsistent(OccLocateError):
    """Street-light distances violate the right-triangle relations."""


class InsufficientStreetLights(OccLocateError):
    """Fewer than two decodable street lights this tick."""


class TaillightOccluded(OccLocateError):
    """Only one taillight of a forwarding vehicle decoded."""


# harness
class ParseError(OccLocateError):
    """A scenario file could not be parsed."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(OccLocateError):
    """A scenario field violates its invariant."""

    def __init__(self, field, message=""):
        super().__init__(f"{field}: {message}" if message else field)
        self.field = field
