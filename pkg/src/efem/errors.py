"""Exception hierarchy. The CLI prints ``ClassName: message`` on failure."""


class EfemError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EfemError, ValueError):
    pass


class DataError(EfemError, ValueError):
    pass


class ShapeError(EfemError, ValueError):
    pass


class UndefinedCorrelationError(DataError):
    pass


class SelectionError(EfemError):
    pass


class WindowError(EfemError, ValueError):
    pass


class SplitError(EfemError, ValueError):
    pass


class NumericError(EfemError, ArithmeticError):
    pass


class UsageError(EfemError, RuntimeError):
    pass


class ParseError(EfemError, ValueError):
    pass


class TrainingError(EfemError, RuntimeError):
    pass
