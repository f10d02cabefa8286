"""Exception hierarchy shared across the package."""


class SrxError(Exception):
    """Base class for all package errors."""


class DimensionError(SrxError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SrxError, ValueError):
    """A call violated a documented precondition."""


class ValidationError(SrxError, ValueError):
    """Ingested data breaks a structural rule."""


class ConfigError(SrxError, ValueError):
    """A run or model configuration is inconsistent."""


class NumericalError(SrxError, ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(SrxError, ValueError):
    """A binary or text file does not follow its declared layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
