"""Exception hierarchy shared by all quasipot modules."""


class QuasipotError(Exception):
    """Base class; ``category`` doubles as the CLI exit status."""

    category = 1


class ParameterError(QuasipotError, ValueError):
    category = 2


class ConfigError(ParameterError):
    """Invalid configuration entry; ``key`` is the dotted key path."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class FactorizationError(QuasipotError, ArithmeticError):
    """Matrix is not symmetric positive definite.

    ``minor`` is the 1-based order of the first leading principal minor
    that failed (0 when the matrix is not symmetric).
    """

    category = 3

    def __init__(self, message, minor=0):
        self.minor = minor
        super().__init__(message)


class DegeneratePathError(QuasipotError, ValueError):
    category = 3


class DivergenceError(QuasipotError, RuntimeError):
    category = 3
