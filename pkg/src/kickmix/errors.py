"""Exception types shared across the package."""


class KickmixError(Exception):
    pass


class ConfigurationError(KickmixError, ValueError):
    """Invalid sizes, truncations, selectors or parameters."""


class DomainError(KickmixError, ValueError):
    """Input outside the mathematical domain (e.g. a field with nonzero mean)."""


class BlowUpError(KickmixError, RuntimeError):
    """The time integrator produced non-finite values."""

    def __init__(self, time: float, message: str = ""):
        self.time = time
        super().__init__(message or f"non-finite state at t={time:.6g}; reduce dt")
