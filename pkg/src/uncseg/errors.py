"""Exception hierarchy.

The CLI maps :class:`UsageError` to exit code 1 and every :class:`DataError`
subclass to exit code 2.
"""


class UncsegError(Exception):
    pass


class UsageError(UncsegError):
    """Wrong call sequence or out-of-range argument."""


class DataError(UncsegError):
    """Bad input data, file contents or configuration values."""


class FormatError(DataError):
    pass


class LengthError(DataError):
    pass


class ShapeError(DataError):
    pass


class SchemaError(DataError):
    pass


class ConfigError(DataError):
    pass


class InputError(DataError):
    """A required input file is missing."""


class DivergenceError(DataError):
    """Training produced a non-finite loss."""


class BoundsError(UsageError):
    pass
