"""Exception types shared across the package."""


class CCMError(Exception):
    """Base class for all package errors."""


class DimensionError(CCMError, ValueError):
    pass


class ChordalityError(CCMError, ValueError):
    pass


class CoverageError(CCMError, RuntimeError):
    """A nonzero block of the synthesis matrix is not inside any clique."""


class UnboundVariableError(CCMError, KeyError):
    pass


class PolySyntaxError(CCMError, ValueError):
    pass


class PreconditionError(CCMError, ValueError):
    pass


class AdmissibilityError(CCMError, RuntimeError):
    pass


class SynthesisFailed(CCMError, RuntimeError):
    """Raised when the sampled LMI could not be satisfied.

    ``status`` is one of ``"infeasible"``, ``"inconclusive"`` or ``"budget"``;
    ``worst`` optionally carries ``(eigenvalue, point)`` of the worst sample
    and ``certificate`` the candidate that failed verification.
    """

    def __init__(self, message, status="inconclusive", worst=None, certificate=None):
        super().__init__(message)
        self.status = status
        self.worst = worst
        self.certificate = certificate


class DivergenceError(CCMError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(CCMError, ValueError):
    pass


class DesignFailed(CCMError, RuntimeError):
    """The linear baseline design has no solution within the given bound."""
