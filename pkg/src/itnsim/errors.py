"""Exception types shared across the package."""


class ItnError(Exception):
    """Base class for package errors."""


class FormatError(ItnError):
    """Input file does not follow the expected layout."""


class DataError(ItnError, ValueError):
    """Input values violate a domain constraint."""


class ConfigError(ItnError, ValueError):
    """Invalid run or chain configuration."""
