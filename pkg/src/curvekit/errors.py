"""Exception types shared across the toolkit."""


class CurveKitError(Exception):
    """Base class for all curvekit errors."""


class OrderingError(CurveKitError, ValueError):
    """Time or date arguments violate the required ordering."""


class DomainError(CurveKitError, ValueError):
    """Inputs lie outside the mathematical domain of an operation."""


class ShapeError(CurveKitError, ValueError):
    """Vector/matrix dimensions are inconsistent."""


class MissingDataError(CurveKitError, LookupError):
    """A required market-data point is not available."""


class DegenerateSpecError(CurveKitError, ValueError):
    """Model parameters make the requested computation degenerate."""


class DegenerateExpiryError(CurveKitError, ValueError):
    """Zero or invalid time-to-expiry where a positive one is required."""


class DegenerateDataError(CurveKitError, ValueError):
    """Input data carries no usable signal (e.g. zero variance)."""


class UnsupportedSpecError(CurveKitError, ValueError):
    """The operation is only defined for a restricted family of specs."""


class SingularInversionError(CurveKitError, ValueError):
    """A factor inversion is singular for the given parameters."""


class InfeasibleCalibrationError(CurveKitError):
    """The vol strip cannot be matched with non-negative forward variance.

    Attributes
    ----------
    label : str
        The contract at which bootstrapping first fails.
    max_feasible_vol : float
        Largest implied vol for that contract consistent with the
        already-calibrated earlier knots.
    """

    def __init__(self, label, max_feasible_vol):
        self.label = label
        self.max_feasible_vol = max_feasible_vol
        super().__init__(
            f"calibration infeasible at contract {label!r}: "
            f"negative forward variance (max feasible vol "
            f"{max_feasible_vol:.6g})"
        )


class NotPositiveSemiDefiniteError(CurveKitError):
    """A matrix required to be PSD fails beyond the repair tolerance."""

    def __init__(self, message, minor_order=None, pivot=None):
        self.minor_order = minor_order
        self.pivot = pivot
        super().__init__(message)

    @classmethod
    def at_minor(cls, minor_order, pivot):
        return cls(
            f"matrix is not positive semi-definite: leading minor of order "
            f"{minor_order} has pivot {pivot:.6g}",
            minor_order=minor_order,
            pivot=pivot,
        )


class ModelVersionError(CurveKitError):
    """A persisted model file has an incompatible version."""


class BundleLoadError(CurveKitError):
    """Loading a data bundle failed; ``diagnostics`` lists row-level issues."""

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        detail = "".join(f"\n  {d}" for d in self.diagnostics)
        super().__init__(message + detail)
