"""Exception types shared across the package."""


class AriseError(ValueError):
    """Base class for all package-specific errors."""


class LengthMismatchError(AriseError):
    """A sample buffer does not have the expected number of samples."""


class ShapeMismatchError(AriseError):
    """Two arrays that must agree in shape do not."""


class NonFiniteError(AriseError):
    """An input contains NaN or infinite values."""


class DegenerateSceneError(AriseError):
    """A scene cannot be mixed (no noise sources, or zero-power signals)."""


class DegenerateSignalError(AriseError):
    """A metric cannot be computed (zero reference, no voiced frames)."""


class ConfigError(AriseError):
    """Invalid configuration value or unknown configuration key."""


class FileFormatError(AriseError):
    """A file does not conform to its declared binary or text format."""
