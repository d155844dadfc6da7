"""Exception types raised by the toolkit."""


class DomainError(ValueError):
    """An input lies outside the domain an operation accepts."""


class ParameterError(ValueError):
    """A model or solver parameter is out of range."""


class SingularSystemError(RuntimeError):
    """The finite-element system could not be solved to tolerance."""


class InfeasibleLinearizationError(RuntimeError):
    """A single-constraint projection has no feasible dual (zero gradient, violated constraint)."""


class ProjectionError(RuntimeError):
    """The projection solver hit a numerical failure it cannot recover from."""


class DegenerateDesignError(ValueError):
    """The design has no material, so mass-weighted quantities are undefined."""


class UnsupportedProblemError(ValueError):
    """The optimizer does not support the requested problem."""


class ConfigError(ValueError):
    """A run configuration is malformed. ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
