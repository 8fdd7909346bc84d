"""Exception hierarchy shared across the package.

The CLI maps each class onto a process exit code.
"""


class GTDError(Exception):
    exit_code = 1


class ConfigError(GTDError, ValueError):
    exit_code = 2


class FormatError(GTDError, ValueError):
    exit_code = 3


class NonFiniteError(GTDError, FloatingPointError):
    exit_code = 4


class ShapeError(GTDError, ValueError):
    exit_code = 3
