"""Exception hierarchy.

Validation problems (bad inputs, out-of-range queries) derive from
``ValidationError``; numerical failures (quadrature that does not reach its
tolerance, root finders that do not converge) derive from ``NumericalError``.
The CLI maps the two families onto distinct exit codes.
"""


class PatchAntennaError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PatchAntennaError, ValueError):
    """An input violates a documented precondition."""


class WavelengthRangeError(ValidationError):
    def __init__(self, wavelength, lo, hi):
        self.wavelength = wavelength
        self.valid_range = (lo, hi)
        super().__init__(
            f"wavelength {wavelength:g} nm outside tabulated range [{lo:g}, {hi:g}] nm"
        )


class NoBoundModeError(ValidationError):
    """The metal/dielectric pair does not support a bound surface plasmon."""


class DegeneratePairError(ValidationError):
    """F_perp <= F_par: the conditional density collapses to a delta."""


class HistogramParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(PatchAntennaError, ArithmeticError):
    """A numerical procedure failed to reach its requested accuracy."""


class AccuracyError(NumericalError):
    def __init__(self, message, estimate=None, error=None):
        self.estimate = estimate
        self.error = error
        super().__init__(message)


class RootFindingError(NumericalError):
    def __init__(self, message, best_root=None, best_residual=None):
        self.best_root = best_root
        self.best_residual = best_residual
        super().__init__(message)
