"""Exception hierarchy shared across the toolkit."""


class LingermortError(Exception):
    """Base class for all toolkit errors."""


# --- panel loading / validation ---------------------------------------------

class MissingCellError(LingermortError):
    """A required (age, year, cause) combination is absent from the input."""

    def __init__(self, cells):
        self.cells = list(cells)
        super().__init__(f"missing panel cells: {self.cells[:10]}"
                         + (" ..." if len(self.cells) > 10 else ""))


class InconsistentExposureError(LingermortError):
    """Population differs across causes within one (age, year)."""


class NonPositiveExposureError(LingermortError):
    pass


class NegativeDeathsError(LingermortError):
    pass


class RaggedYearsError(LingermortError):
    """Year axis has gaps."""


class UnknownEraError(LingermortError):
    pass


class MalformedRowError(LingermortError):
    pass


class EmptyExportError(LingermortError):
    pass


class ZeroRateError(LingermortError):
    """A zero mortality rate where a logarithm is required."""

    def __init__(self, coords):
        self.coords = list(coords)
        super().__init__(f"zero rates at (age, year, cause): {self.coords[:10]}"
                         + (" ..." if len(self.coords) > 10 else ""))


class BaselineOutOfRangeError(LingermortError):
    pass


class YearOutOfRangeError(LingermortError):
    pass


class ZeroBaselineRateError(LingermortError):
    pass


class AgeOutOfRangeError(LingermortError):
    pass


# --- model / likelihood ------------------------------------------------------

class DimensionMismatchError(LingermortError):
    pass


class SingularCovarianceError(LingermortError):
    """Covariance factorization failed; `pattern` names the mixture component."""

    def __init__(self, message, pattern=None):
        self.pattern = pattern
        super().__init__(message)


# --- estimation --------------------------------------------------------------

class DegenerateTrendError(LingermortError):
    pass


class AlsStallWarning(UserWarning):
    """PARAFAC sweeps stalled before converging; the best factors are returned."""


class JumpYearMissingError(LingermortError):
    pass


class NoPostJumpDataError(LingermortError):
    pass


class NonFiniteObjectiveError(LingermortError):
    pass


class WindowTooShortError(LingermortError):
    pass


class SingularHessianError(LingermortError):
    def __init__(self, message, coords=None):
        self.coords = list(coords) if coords is not None else []
        super().__init__(message)


class AllZeroAgeRowError(LingermortError):
    pass


# --- projection / valuation --------------------------------------------------

class NonConvergedFitError(LingermortError):
    pass


class InvalidScenarioError(LingermortError):
    pass


class UnknownScenarioError(LingermortError):
    pass


class HorizonExceedsPathError(LingermortError):
    pass


class HorizonTooShortError(LingermortError):
    pass


class SampleTooSmallError(LingermortError):
    pass


class DegenerateVarianceError(LingermortError):
    pass
