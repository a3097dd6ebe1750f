"""Exception types shared across the package."""


class FacecloakError(Exception):
    """Base class for errors raised by this package."""


class IoFailure(FacecloakError):
    """Filesystem write/read failed for a reason other than decoding."""


class UnreadableImage(FacecloakError):
    """File is missing, truncated, or not a decodable raster image."""


class UnsupportedFormat(FacecloakError):
    """Image container is not one we handle (PNG/JPEG only)."""


class MalformedLine(FacecloakError):
    """A manifest line does not have the expected tab-separated fields."""

    def __init__(self, message, line_no=None):
        super().__init__(message)
        self.line_no = line_no


class EmptyManifest(FacecloakError):
    """A pair manifest contained no usable entries."""


class ShapeMismatch(FacecloakError):
    """Array shape does not match what a model or metric expects."""


class LabelOutOfRange(FacecloakError):
    """Class label outside the supervisory head's range."""


class NonFiniteGradient(FacecloakError):
    """Backward pass produced NaN or Inf."""


class NonFiniteLoss(FacecloakError):
    """Training loss became NaN or Inf."""


class NonSquareInput(FacecloakError):
    """Whole-image frequency ops require square spatial dimensions."""


class BandOutOfRange(FacecloakError):
    """Requested frequency band index outside [1, H]."""


class QualityOutOfRange(FacecloakError):
    """JPEG quality factor outside the integer range [1, 100]."""


class EmptyAdmixPool(FacecloakError):
    """Admix transform requested but no mixing pool was supplied."""


class DatasetTooSmall(FacecloakError):
    """Training set has too few images for the requested class count."""


class NeedsBothLabels(FacecloakError):
    """Threshold calibration needs at least one positive and one negative pair."""


class PairCountMismatch(FacecloakError):
    """Clean and adversarial pair sets differ in length."""


class NoTargets(FacecloakError):
    """Transfer evaluation invoked with an empty target list."""


class NotRobustSourceWarning(UserWarning):
    """A robust-source attack was given a standard-trained model."""
