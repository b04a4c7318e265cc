"""Exception hierarchy shared by every qftsum module."""


class QftSumError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QftSumError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ResourceLimitError(QftSumError, MemoryError):
    """A state would exceed the configured amplitude budget."""


class ProtocolLogicError(QftSumError, RuntimeError):
    """A protocol step was invoked out of order or with broken ownership.

    This signals a bug in the caller (or a test), never an attack.
    """


class InternalStateError(QftSumError, RuntimeError):
    """A simulated quantum state is corrupt (e.g. a zero-norm branch was drawn)."""
