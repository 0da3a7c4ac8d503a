"""Exception types shared across the toolkit."""


class LntkitError(Exception):
    """Base class for all toolkit errors."""


class FormatError(LntkitError):
    """A file's bytes do not match the expected on-disk format."""


class ConsistencyError(LntkitError):
    """Inputs that must agree (counts, dimensions, label ranges) do not."""


class ConfigError(LntkitError):
    """A configuration value is unusable for the given data."""


class InvalidInputError(LntkitError):
    """An argument is outside the operation's domain."""


class SingularityError(LntkitError):
    """A Gram matrix could not be factorized; retry with a positive ridge."""


class DegenerateModelError(LntkitError):
    """Training data cannot produce a meaningful model (e.g. one class)."""
