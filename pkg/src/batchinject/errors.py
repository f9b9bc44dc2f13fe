"""Exception types shared across the package."""


class BatchInjectError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(BatchInjectError):
    """Array shapes do not conform; the message names both shapes."""


class ConfigurationError(BatchInjectError):
    """A spec, hyperparameter, or config file value is invalid."""


class DataFormatError(BatchInjectError):
    """Bytes on disk do not match the documented file format."""


class NonFiniteError(BatchInjectError):
    """A NaN or Inf appeared where only finite values are allowed."""


class DivergedRunError(BatchInjectError):
    """Training loss went non-finite or blew up; carries partial history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class GradientCheckError(BatchInjectError):
    """Gradient checking could not run (e.g. non-deterministic closure)."""
