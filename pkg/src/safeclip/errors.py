"""Exception taxonomy shared across the package."""


class SafeClipError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(SafeClipError, ValueError):
    """Invalid static configuration: dimensions, rates, config files."""


class InputError(SafeClipError, ValueError):
    """Malformed runtime input: bad batches, non-finite pixels, empty captions."""


class StateError(SafeClipError, RuntimeError):
    """Operation called against an object in the wrong state (e.g. unwarmed pool)."""


class TrainingFault(SafeClipError, RuntimeError):
    """Non-recoverable fault during training; the run must abort with a diagnostic."""


class EmptySafeSetError(StateError):
    """The posterior threshold admitted no pairs; the trainer decides how to recover."""
