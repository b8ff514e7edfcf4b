"""Exception hierarchy shared across the package.

Each class carries the process exit code the CLI maps it to.
"""


class SamoeError(Exception):
    exit_code = 1


class UsageError(SamoeError):
    """Operation called in a state or with arguments it does not accept."""

    exit_code = 1


class ConfigError(UsageError):
    exit_code = 1


class DimensionError(SamoeError, ValueError):
    """Tensor shapes do not fit the operation."""

    exit_code = 1


class NumericError(SamoeError, FloatingPointError):
    """A NaN or infinity appeared where only finite values are allowed."""

    exit_code = 3


class ContractError(SamoeError):
    """A freeze or phase-ordering contract of the training protocol was broken."""

    exit_code = 1


class SpecError(SamoeError, ValueError):
    exit_code = 1


class SplitError(SamoeError, ValueError):
    exit_code = 1


class FormatError(SamoeError):
    """Malformed dataset or checkpoint file."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AccountingError(SamoeError):
    exit_code = 1
