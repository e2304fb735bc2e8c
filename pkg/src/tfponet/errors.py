"""Exception types shared across the package."""


class DomainError(ValueError):
    """Argument outside the domain where a routine is defined."""


class AmbiguousSideError(ValueError):
    """A point lies on an interface and no side was given."""


class ConfigError(ValueError):
    """Invalid problem or experiment configuration."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, divergence, ...)."""


class SingularSystemError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class TrainingError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
