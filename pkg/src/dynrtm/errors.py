"""Exception types shared across the package.

Validation problems (bad files, malformed inputs) map to CLI exit code 1,
configuration problems found while running map to exit code 2.
"""


class DynRTMError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(DynRTMError, ValueError):
    """Input does not satisfy a documented schema or invariant."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SchemaError(ValidationError):
    """A file parsed but violates its schema."""


class NonFiniteError(ValidationError):
    """A numeric field is NaN or infinite."""


class MissingFileError(DynRTMError, FileNotFoundError):
    """A required input file does not exist."""


class ConfigurationError(DynRTMError):
    """Inputs are individually valid but cannot be run together."""


class TargetInfeasibleError(ConfigurationError):
    """No library entry meets the latency target."""


class FloorInfeasibleError(ConfigurationError):
    """No library entry meets the accuracy floor."""


class NotFittedError(DynRTMError, AttributeError):
    """An estimator was used before ``fit``."""
