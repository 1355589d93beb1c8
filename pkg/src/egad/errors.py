"""Exception hierarchy shared across the package.

The CLI maps each top-level class to a process exit code.
"""


class EgadError(Exception):
    exit_code = 1


class ConfigError(EgadError, ValueError):
    exit_code = 2


class IngestionError(EgadError):
    exit_code = 3


class DependencyError(EgadError):
    exit_code = 4


class NumericalError(EgadError, FloatingPointError):
    """NaN or Inf produced by a computation."""

    exit_code = 5


class InputError(EgadError, ValueError):
    pass


class DimensionError(InputError):
    pass


class DomainError(InputError):
    pass


class OracleError(EgadError):
    pass
