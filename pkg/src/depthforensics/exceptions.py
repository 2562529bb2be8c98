"""Exception taxonomy shared across the package.

Every error that can surface through the CLI maps to one of these classes,
each carrying a short machine-parsable code (see ``cli.EXIT_CODES``).
"""


class DepthForensicsError(Exception):
    """Base class for all package errors."""

    code = "ERROR"


class ContractViolation(DepthForensicsError, ValueError):
    """An operation was called with inputs violating its precondition."""

    code = "CONTRACT"


class DataFormatError(DepthForensicsError, ValueError):
    """A file on disk is missing, corrupt, or of an incompatible version."""

    code = "DATA"


class NonFiniteLossError(DepthForensicsError, ArithmeticError):
    """Training produced a NaN/inf loss; a diagnostic snapshot is attached."""

    code = "NUMERIC"

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


class SingleClassAucError(ContractViolation):
    """AUC is undefined when only one class is present."""

    code = "CONTRACT"
