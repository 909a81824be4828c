"""Exception types raised across the package."""


class RelgraphError(Exception):
    """Base class for all package errors."""


class InputError(RelgraphError, ValueError):
    """Arguments violate an operation's preconditions."""


class ConfigurationError(RelgraphError, ValueError):
    """A model or build configuration is internally inconsistent."""


class NumericError(RelgraphError, ArithmeticError):
    """A computation produced a non-finite value or failed to converge."""


class LoadError(RelgraphError):
    """A file could not be read or failed validation."""


class VersionError(LoadError):
    """A file was written by an unsupported format version."""
