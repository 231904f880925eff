"""Exception types shared across the toolkit.

Grouped by pipeline stage; all inherit SasvoltError so callers can catch
toolkit failures with one clause. The CLI maps these onto exit codes.
"""


class SasvoltError(Exception):
    """Base class for all toolkit errors."""


# signal
class NyquistViolation(SasvoltError):
    pass


class NonPositiveDuration(SasvoltError):
    pass


class NonPositiveBandwidth(SasvoltError):
    pass


class SampleRateMismatch(SasvoltError):
    pass


class TooShort(SasvoltError):
    pass


class ZeroSignal(SasvoltError):
    pass


class KappaOutOfRange(SasvoltError):
    pass


# simulator
class SceneOutOfRange(SasvoltError):
    pass


class EmptyMesh(SasvoltError):
    pass


class InvalidCounts(SasvoltError):
    pass


# beamform
class VoxelOutOfRange(SasvoltError):
    pass


class NonAnalyticInput(SasvoltError):
    pass


# deconv / render optimization
class DivergedLoss(SasvoltError):
    pass


# scene
class EmptyIsosurface(SasvoltError):
    pass


# render geometry
class DegenerateEllipsoid(SasvoltError):
    pass


class NoIntersection(SasvoltError):
    pass


class AllZeroMagnitude(SasvoltError):
    pass


class NonMonotoneDepths(SasvoltError):
    pass


class AllZeroWeights(SasvoltError):
    pass


class MisalignedSamples(SasvoltError):
    pass


# metrics
class EmptySet(SasvoltError):
    pass


class DimsMismatch(SasvoltError):
    pass


class AllEmptyIsosurfaces(SasvoltError):
    pass


# cli_io
class ContainerError(SasvoltError):
    """Bad magic/version/kind or truncated payload."""


class ConfigError(SasvoltError):
    """Unknown key, missing required key, or unparsable value."""
