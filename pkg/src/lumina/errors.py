"""Exception hierarchy shared across the package.

I/O problems and numerical-precondition problems are kept on separate
branches so the CLI can map them to distinct exit codes (2 and 3).
"""


class LuminaError(Exception):
    """Base class for every error raised by this package."""


class ImageIOError(LuminaError):
    """Raster file could not be read or written."""


class MalformedHeaderError(ImageIOError):
    """File header does not parse as the expected format."""


class UnsupportedBitDepthError(ImageIOError):
    """Format is recognized but the sample depth is not 8-bit."""


class UnsupportedFormatError(ImageIOError):
    """Recognized container with an unsupported layout (palette, alpha, interlace)."""


class TruncatedPayloadError(ImageIOError):
    """Pixel payload ends before the header-declared size."""


class PreconditionError(LuminaError):
    """Input violates an operation's documented precondition."""


class ShapeMismatchError(PreconditionError):
    """Operands have incompatible shapes."""


class ManifestError(LuminaError):
    """Dataset manifest is missing, malformed, or inconsistent."""


class ConfigError(LuminaError):
    """Run configuration contains unknown keys or bad values."""


class FusionFitError(LuminaError):
    """Score-fusion fit failed (degenerate design matrix)."""


class WeightsFileError(LuminaError):
    """Weights file is malformed or inconsistent with the receiving model."""
