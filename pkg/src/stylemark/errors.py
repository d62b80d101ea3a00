"""Exception hierarchy shared across the pipeline."""


class StylemarkError(Exception):
    """Base class for all stylemark errors."""


class UnreadableImage(StylemarkError):
    """File could not be decoded as an image."""


class UnsupportedColorMode(StylemarkError):
    """Image decodes but is not an 8-bit RGB(A) raster (e.g. CMYK)."""


class InvalidLength(StylemarkError):
    """Watermark length is not a positive integer."""


class InsufficientData(StylemarkError):
    """Corpus directory holds fewer decodable images than requested splits."""


class ShapeError(StylemarkError):
    """Tensor shape violates an operation's contract."""


class ShapeMismatch(ShapeError):
    """Two operands that must agree in shape do not."""


class LengthMismatch(StylemarkError):
    """Bit vectors of different lengths were combined."""


class InvalidSpec(StylemarkError):
    """Distortion parameters outside their declared ranges."""


class EmptyPool(StylemarkError):
    """Noise pool has no entries to sample from."""


class CodecFailure(StylemarkError):
    """JPEG encode/decode round trip failed."""


class ExternalStylizerFailure(StylemarkError):
    """External stylizer subprocess failed or produced unreadable output."""


class NonFiniteLoss(StylemarkError):
    """Training loss became NaN/Inf; carries a diagnostic payload."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientPretraining(StylemarkError):
    """Bootstrap pretraining was configured with zero iterations."""


class CorruptCheckpoint(StylemarkError):
    """Checkpoint payload hash does not match its header."""


class VersionMismatch(StylemarkError):
    """Checkpoint metadata is incompatible with the requesting config."""


class BitsLengthMismatch(StylemarkError):
    """Provided payload length differs from the model's configured length."""


class IOFailure(StylemarkError):
    """Report or artifact files could not be written."""
