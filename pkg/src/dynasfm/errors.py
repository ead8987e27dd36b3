"""Exception hierarchy shared by all dynasfm modules."""


class DynaSfmError(Exception):
    """Base class for all errors raised by this package."""


# --- geometry ---------------------------------------------------------------

class PointBehindCamera(DynaSfmError):
    """Projection requested for a point at or behind the camera plane."""


class NonPositiveDepth(DynaSfmError):
    """Back-projection requested with depth <= 0."""


class DegenerateGeometry(DynaSfmError):
    """Triangulation geometry is ill-posed (coincident centers or no parallax)."""


class BehindCamera(DynaSfmError):
    """Triangulated point fails the cheirality test in at least one view."""


class TooFewPoints(DynaSfmError):
    """Not enough point correspondences/observations for the requested fit."""


class DegenerateConfiguration(DynaSfmError):
    """Point configuration is rank-deficient (e.g. collinear) for alignment."""


# --- file I/O and generation ------------------------------------------------

class ParseError(DynaSfmError):
    """Malformed input file. Carries the offending path and line number."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where = f" [{where}]"
        super().__init__(f"{message}{where}")


class InvariantViolation(DynaSfmError):
    """Data violates a structural invariant (e.g. track starts invisible)."""


class NonPositiveDepthValue(DynaSfmError):
    """A depth raster or sample contains a value <= 0 or non-finite."""


class InvalidConfig(DynaSfmError):
    """Configuration values are out of range or inconsistent."""


# --- motion segmentation ----------------------------------------------------

class EmptyInput(DynaSfmError):
    """An operation that needs at least one sample received none."""


class MissingDepth(DynaSfmError):
    """A track required to carry depth samples has none."""


class WindowTooShort(DynaSfmError):
    """A feature window needs at least two frames."""


class TooFewCovisible(DynaSfmError):
    """A frame pair has fewer co-visible tracks than the configured minimum."""


class MissingGroundTruth(DynaSfmError):
    """Ground-truth motion is unavailable for label derivation."""


# --- global SfM -------------------------------------------------------------

class NoStaticTracks(DynaSfmError):
    """Static/visible selection produced an empty track set."""


class GraphDisconnected(DynaSfmError):
    """The view graph does not connect all frames."""


class DegenerateDirections(DynaSfmError):
    """Relative translation directions do not constrain the camera centers."""


class SolverDiverged(DynaSfmError):
    """Levenberg-Marquardt damping exceeded its ceiling without progress."""


class NumericalFailure(DynaSfmError):
    """Normal equations could not be solved even after damping."""


# --- fusion -----------------------------------------------------------------

class TooFewAnchors(DynaSfmError):
    """Fewer than three static anchors available for depth calibration."""


class NegativeScale(DynaSfmError):
    """Depth calibration produced a non-positive scale."""


class MissingCalibration(DynaSfmError):
    """A frame contributing fused points has no depth calibration entry."""


# --- metrics ----------------------------------------------------------------

class LengthMismatch(DynaSfmError):
    """Paired sequences have different lengths."""


class DeltaTooLarge(DynaSfmError):
    """Relative-pose delta leaves no frame pairs to evaluate."""


class IdMismatch(DynaSfmError):
    """Predicted and ground-truth track sets do not share ids/frame ranges."""


class ProbabilityOutOfRange(DynaSfmError):
    """A probability used in a cross-entropy loss lies outside [0, 1]."""
