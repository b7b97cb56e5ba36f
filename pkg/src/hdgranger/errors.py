"""Exception types shared across the package."""


class HdgrangerError(Exception):
    """Base class for all domain errors raised by this package."""


class PanelValidationError(HdgrangerError):
    """Input panel failed ingestion validation (NaN/Inf, bad header, ...)."""


class UnstableModelError(HdgrangerError):
    """A VAR model (true or estimated) has spectral radius >= 1."""

    def __init__(self, rho: float, message: str | None = None):
        self.rho = float(rho)
        super().__init__(message or f"VAR companion matrix is unstable: spectral radius {rho:.6f} >= 1")


class NonPositiveDefiniteError(HdgrangerError):
    """A covariance matrix that must be positive definite is not."""


class SingularCovarianceError(HdgrangerError):
    """Model-implied covariance matrix is numerically singular (rcond < 1e-12)."""


class DegenerateDesignError(HdgrangerError):
    """The rotated Gram matrix of an estimator is singular."""


class SampleTooShortError(HdgrangerError):
    """Not enough usable observations for the requested computation."""


class ConvergenceError(HdgrangerError):
    """Iterative solver failed to converge within its iteration cap."""

    def __init__(self, iterations: int, message: str | None = None):
        self.iterations = int(iterations)
        super().__init__(message or f"solver did not converge after {iterations} iterations")


class ExperimentError(HdgrangerError):
    """A Monte Carlo experiment could not produce a valid result."""
