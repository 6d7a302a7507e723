"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ParameterError(ValueError):
    """An argument or configuration value is out of its valid range."""


class RankError(ValueError):
    """More components requested than the data can support."""


class UsageError(RuntimeError):
    """An API was called in a state it does not support."""


class DataFormatError(ValueError):
    """An input file does not match the documented layout."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class UnderdeterminedError(ValueError):
    """A regression system has fewer rows than unknowns."""


class UnsupportedError(ValueError):
    """A requested variant is outside what this implementation defines."""


class ConfigError(ValueError):
    """An experiment config file is missing keys or contains invalid ones."""
