"""Exception types shared across the package."""


class RflabError(Exception):
    """Base class for all library errors."""


class DimensionError(RflabError, ValueError):
    """Tensor shapes disagree along a named axis."""


class ArgumentError(RflabError, ValueError):
    """An argument is outside its valid range."""


class ConfigurationError(RflabError, ValueError):
    """A model or run configuration cannot be realized."""


class FormatError(RflabError, ValueError):
    """A binary or JSON file does not match its declared layout."""


class DivergenceError(RflabError, RuntimeError):
    """Training produced a non-finite loss."""
