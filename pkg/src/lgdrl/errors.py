"""Exception types shared across the package."""


class LgdrlError(Exception):
    """Base class for all package errors."""


class ConfigError(LgdrlError, ValueError):
    pass


class DomainError(LgdrlError, ValueError):
    """An argument is outside the domain of a mathematical operation."""


class ShapeError(LgdrlError, ValueError):
    pass


class StateError(LgdrlError, RuntimeError):
    """An operation was called in the wrong lifecycle state."""


class FormatError(LgdrlError, ValueError):
    """Malformed file, checkpoint or LLM response."""


class EndpointError(LgdrlError, RuntimeError):
    pass


class EmptyBufferError(LgdrlError, RuntimeError):
    pass


class SchemaError(LgdrlError, ValueError):
    pass


class MissingDataError(LgdrlError, LookupError):
    pass
