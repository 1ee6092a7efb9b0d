"""Exception types shared across modules, mapped to CLI exit codes."""


class FreqMambaError(Exception):
    """Base class for all package errors."""


class ShapeError(FreqMambaError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(FreqMambaError, ValueError):
    """Invalid or unknown configuration content (CLI exit code 1)."""


class MagicError(FreqMambaError, ValueError):
    """A serialized file does not start with the expected magic bytes."""


class TruncatedError(FreqMambaError, ValueError):
    """A serialized file ends before its declared payload."""


class ConfigMismatchError(FreqMambaError, ValueError):
    """Checkpoint config does not match the expected model config."""


class NumericError(FreqMambaError, ArithmeticError):
    """Non-finite value encountered where finiteness is required (exit 3)."""
