"""Exception hierarchy shared by all hetwls modules."""


class HetWLSError(Exception):
    """Base class for every error raised by hetwls."""


class EstimationError(HetWLSError):
    """An estimator could not produce a result for the given data."""


class SingularDesign(EstimationError):
    """The (row-scaled) design matrix is numerically rank deficient."""

    def __init__(self, rcond, message=None):
        self.rcond = float(rcond)
        super().__init__(message or f"design is singular (rcond={self.rcond:.3e} < 1e-12)")


class InvalidGamma(EstimationError):
    """The summary functional is not positive on the design estimate."""


class EmptyGroup(EstimationError):
    def __init__(self, group):
        self.group = int(group)
        super().__init__(f"group {self.group} has no observations")


class DegenerateGroupVariance(EstimationError):
    def __init__(self, group, value):
        self.group = int(group)
        self.value = float(value)
        super().__init__(
            f"group {self.group}: Gamma(B C_m B) = {self.value:.3e} is not positive"
        )


class SingularCovariance(EstimationError):
    """A covariance matrix could not be inverted."""


class InvalidMoments(EstimationError):
    """Weight moments are unusable (for example E[w] <= 0)."""


class MissingColumn(HetWLSError, ValueError):
    """A required input (sigma, groups, a CSV column) was not supplied."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"required column '{column}' is missing")


class QuadratureFailure(HetWLSError):
    def __init__(self, name, abserr, tol):
        self.abserr = float(abserr)
        super().__init__(
            f"quadrature for {name} did not reach tolerance {tol:g} (error estimate {abserr:.3e})"
        )


class AllFrequenciesSingular(EstimationError):
    """Every frequency on the grid produced a singular harmonic design."""


class InvalidTarget(HetWLSError, ValueError):
    """Downsampling target larger than the light curve."""
