"""Exception types raised by regionblend."""


class RegionBlendError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(RegionBlendError, ValueError):
    """Invalid configuration value. The CLI maps these to exit code 2."""


class ScheduleConfigError(ConfigError):
    pass


class BlendConfigError(ConfigError):
    pass


class CollageError(ConfigError):
    pass


class SolverError(RegionBlendError):
    pass


class DegenerateGridError(SolverError):
    pass


class ShapeError(RegionBlendError, ValueError):
    pass


class TapPlanError(RegionBlendError):
    pass


class ImageIOError(RegionBlendError, OSError):
    pass


class NumericalFailure(RegionBlendError, FloatingPointError):
    """A latent became non-finite. ``step`` names where it happened."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite values in latent at step {step}")
