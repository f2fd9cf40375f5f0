"""Exception hierarchy shared by every module of the package."""


class ZSLError(Exception):
    """Base class for all package errors."""


class ArgumentError(ZSLError, ValueError):
    """An argument violates an operation's precondition."""


class ParseError(ZSLError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(ParseError):
    """Vector lengths disagree with the declared dimension."""


class ClassReferenceError(ParseError):
    """A record references a class that is unknown or in the wrong partition."""


class ValidationError(ParseError):
    """A value is present but invalid (non-finite, duplicate, ...)."""


class PartitionError(ValidationError):
    """Seen and unseen class partitions overlap."""


class NumericError(ZSLError, ArithmeticError):
    """A non-finite value appeared during training or loss evaluation."""

    def __init__(self, message, param=None, epoch=None):
        super().__init__(message)
        self.param = param
        self.epoch = epoch
