"""Exception hierarchy shared by every module."""


class APError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(APError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(APError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of a non-positive)."""


class ContractError(APError, ValueError):
    """A precondition of an operation was violated."""


class DataFormatError(APError, ValueError):
    """A dataset file or directory is malformed."""


class CheckpointError(APError, ValueError):
    """A checkpoint cannot be read or does not match its configuration."""
