"""Exception hierarchy shared by all modules."""


class VolscanError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(VolscanError, ValueError):
    """A numeric argument is outside its admissible range."""


class ConfigurationError(VolscanError):
    """Inconsistent configuration, e.g. a quantile table built for another grid."""


class SchemaError(ConfigurationError):
    """A persisted file does not follow the expected schema."""


class DegenerateObservationError(VolscanError):
    """The observations carry no variation (all increments zero)."""


class ConstructionError(VolscanError):
    """An alternative or grid cannot be built for the requested parameters."""


class NoRootError(VolscanError):
    """Bracketing root search found no sign change.

    Attributes
    ----------
    diagnostics : dict
        Brackets tried and the function values at their ends.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
