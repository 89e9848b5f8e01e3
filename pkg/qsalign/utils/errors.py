"""
Exception hierarchy shared by every qsalign module.

Each error carries the process exit code the CLI reports for it.
"""


class QSAlignError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(QSAlignError):
    """Bad or incomplete configuration (unknown key, head mismatch, ...)."""

    exit_code = 2


class InvalidInputError(QSAlignError, ValueError):
    """An operation received arguments outside its domain."""

    exit_code = 3


class DataError(QSAlignError):
    """A file or dataset on disk is missing or malformed."""

    exit_code = 3


class NumericError(QSAlignError, ArithmeticError):
    """Training produced a non-finite value."""

    exit_code = 4


class ProbeError(QSAlignError):
    """A Pareto probe run failed; carries the tuning round it failed in."""

    exit_code = 4

    def __init__(self, round_index: int, cause: BaseException):
        super().__init__(f"probe failed in round {round_index}: {cause}")
        self.round_index = round_index
        self.cause = cause
