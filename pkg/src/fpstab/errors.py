"""Exception types shared across the package."""


class FpstabError(Exception):
    """Base class for all package errors."""


class InvalidExponentError(FpstabError, ValueError):
    """An integrability exponent is outside its admissible range."""


class InvalidMeasureError(FpstabError, ValueError):
    """Weights are negative or do not sum to one."""


class TransformDomainError(FpstabError, ValueError):
    """A pointwise map produced a non-finite value."""


class SizeCapError(FpstabError, ValueError):
    """An exact transport problem exceeds the configured size cap."""


class ConvergenceError(FpstabError, RuntimeError):
    """An iterative method did not converge.

    Parameters
    ----------
    message : str
        Human readable description.
    diagnostics : dict, optional
        Iterate diagnostics at the time of failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class BlowupError(FpstabError, RuntimeError):
    """A simulated trajectory left the admissible region."""

    def __init__(self, message, trajectory, time):
        super().__init__(message)
        self.trajectory = int(trajectory)
        self.time = float(time)


class StepSizeError(FpstabError, ValueError):
    """A time step violates the stability restriction."""

    def __init__(self, message, suggested):
        super().__init__(message)
        self.suggested = float(suggested)


class InvalidCoefficientsError(FpstabError, ValueError):
    """Coefficients violate a structural requirement such as a >= 0."""


class IncompleteIngredientsError(FpstabError, KeyError):
    """A bound assembly is missing a required norm."""


class HypothesisViolationError(FpstabError, ValueError):
    """A coefficient pair fails the mixed Osgood condition on samples."""


class LpsViolationError(FpstabError, ValueError):
    """Integrability exponents fail p, q > 2 and d/p + 2/q < 1."""


class InvalidAlphaError(FpstabError, ValueError):
    """The moment order alpha is outside (2, min(p, q))."""


class SelectionFailure(FpstabError, RuntimeError):
    """Doubling search for the damping parameter did not succeed."""


class ContractionFailure(FpstabError, RuntimeError):
    """Fixed-point inversion did not reach the tolerance."""


class ConfigError(FpstabError, ValueError):
    """A scenario configuration failed validation."""
