"""Exception hierarchy. Each class maps onto one CLI exit code."""


class TacvitError(Exception):
    exit_code = 1


class StorageError(TacvitError):
    """File missing, unreadable or unwritable."""

    exit_code = 2


class ConfigError(TacvitError, ValueError):
    exit_code = 3


class NumericError(TacvitError, FloatingPointError):
    """NaN or Inf appeared in a forward/backward computation or in the loss."""

    exit_code = 4


class EmptyInputError(TacvitError):
    exit_code = 5


class ShapeError(TacvitError, ValueError):
    exit_code = 3


class UsageError(TacvitError, RuntimeError):
    pass
