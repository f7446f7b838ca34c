"""Exception hierarchy shared by all modules."""


class NestcohError(Exception):
    """Base class for all package errors."""


class ParameterError(NestcohError, ValueError):
    """An argument is outside its admissible range."""


class ValidationError(NestcohError, ValueError):
    """An input object violates a structural invariant (Hermiticity, trace, shape)."""


class UndefinedCoherenceError(NestcohError, ValueError):
    """Relative coherence requested for a vanishing initial coherence."""


class NumericError(NestcohError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 3)."""


class IntegratorError(NumericError):
    """Time stepping became unstable."""


class QuadratureError(NumericError):
    """Adaptive quadrature did not reach the requested tolerance."""


class FitError(NumericError):
    """A least-squares fit could not be carried out."""


class ConfigError(NestcohError, ValueError):
    """Scenario configuration is malformed or inconsistent (CLI exit code 2)."""
