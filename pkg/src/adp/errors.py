"""Exception hierarchy shared by all modules."""


class AdpError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(AdpError, ValueError):
    """Array shapes do not match the declared state/input dimensions."""


class GenerationError(AdpError):
    """A random system generator exhausted its attempts."""


class DivergenceError(AdpError):
    """An iterative scheme did not converge within its iteration budget."""


class IllPosedError(AdpError):
    """A matrix that must be positive definite lost definiteness."""


class NotExtractableError(AdpError):
    """No linear policy can be extracted because q_uu is not positive definite."""


class ConfigError(AdpError, ValueError):
    """Invalid experiment or run configuration."""
