"""Exception types shared across the package."""


class CavSyncError(Exception):
    pass


class ShapeError(CavSyncError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(CavSyncError, ValueError):
    """A scalar argument is outside its valid range."""


class ConfigurationError(CavSyncError, ValueError):
    """A configuration is internally inconsistent."""


class InputError(CavSyncError, ValueError):
    """Input data does not meet an operation's preconditions."""


class DataLoadError(CavSyncError, IOError):
    """A dataset file is missing or malformed."""
