"""Exception hierarchy shared across the package."""


class EmrdmError(Exception):
    """Base class for package errors."""


class ConfigError(EmrdmError, ValueError):
    """Invalid configuration values."""


class DomainError(EmrdmError, ValueError):
    """A quantity was requested outside its domain (e.g. t < 0)."""


class ShapeError(EmrdmError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class NumericError(EmrdmError, FloatingPointError):
    """Non-finite values appeared during a computation."""


class CheckpointError(EmrdmError, IOError):
    """A tensor container could not be read (bad magic, version, or layout)."""
