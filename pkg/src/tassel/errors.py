"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: data problems exit 2, numeric
failures exit 3.
"""


class TasselError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(TasselError, ValueError):
    """Tensor dimensions do not agree."""


class NumericError(TasselError, ArithmeticError):
    """A computation produced NaN or Inf."""


class InternalError(TasselError, RuntimeError):
    pass


class LabelIndexError(TasselError, IndexError):
    pass


class ParseError(TasselError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(TasselError, ValueError):
    pass


class ContractError(TasselError, RuntimeError):
    """An operation was called outside of its documented contract."""


class ConfigError(TasselError, ValueError):
    pass


class UnsupportedOperation(TasselError, RuntimeError):
    pass


class ObjectError(TasselError):
    """Wraps a per-object failure so the offending object id is reported."""

    def __init__(self, object_id, cause):
        self.object_id = object_id
        self.cause = cause
        super().__init__(f"object {object_id!r}: {cause}")
