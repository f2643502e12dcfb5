"""Exception types shared across the package."""


class VidPredError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(VidPredError, ValueError):
    pass


class MissingFrameError(VidPredError, FileNotFoundError):
    pass


class ShapeMismatchError(VidPredError, ValueError):
    pass


class ConfigurationError(VidPredError, ValueError):
    """Raised for inconsistent hyperparameters or parameter shapes.

    ``field`` names the offending config entry when one is known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FrozenEncoderError(VidPredError, RuntimeError):
    """Misuse of the manifold encoder: updating it after freezing, or
    using it for adversarial scoring before it was frozen."""
