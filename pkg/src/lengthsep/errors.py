"""Exception types shared across the package."""


class LengthSepError(Exception):
    """Base class for all package errors."""


class NotHyperbolic(LengthSepError):
    """Raised when an operation needs a hyperbolic element (|trace| > 2)."""


class NodeBudgetExceeded(LengthSepError):
    """Word-tree / ball enumeration exceeded the configured node budget."""


class NoConvergence(LengthSepError):
    """Curve relaxation did not reach the gradient tolerance."""


class SpacingCollapse(LengthSepError):
    """Adaptive resampling could not restore node-spacing bounds."""


class CountBoundViolated(LengthSepError):
    """Almost-intersection count exceeded the quadratic budget for the pair."""


class CoverIncomplete(LengthSepError):
    """A sampled sub-epsilon point escaped every covering arc."""


class NoSafeSegment(LengthSepError):
    """No free segment of sufficient length remains on the geodesic."""


class CalibrationFailed(LengthSepError):
    """Amplitude recalibration did not converge within the allowed rounds."""


class AdmissibilityExceeded(LengthSepError):
    """The perturbed metric left the configured norm/curvature budget."""


class ConfigError(LengthSepError):
    """Invalid run configuration (unknown key, bad value, missing file)."""
