"""Exception types shared across the package."""


class TransjumpError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(TransjumpError, ValueError):
    """A parameter is outside its mathematical domain."""


class NumericError(TransjumpError, ArithmeticError):
    """A numerical operation failed (factorization, convergence, overflow)."""


class SingularCovarianceError(NumericError):
    """Covariance matrix is singular; noise injection is required."""


class StructureError(TransjumpError):
    """A chain or matrix violates a structural requirement (e.g. reducibility)."""


class SolverError(NumericError):
    """A root/quantile solver could not bracket or reach its tolerance."""


class GenerationError(TransjumpError):
    """Synthetic data generation failed to satisfy its validity conditions."""


class TraceParseError(TransjumpError):
    """A persisted file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
