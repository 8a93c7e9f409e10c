class StainkitError(Exception):
    """Base class for every error raised by stainkit"""


class UsageError(StainkitError):
    """Bad command line usage (exit code 1)"""


class DataError(StainkitError):
    """Input data cannot be processed (exit code 2)"""


class NoTissueError(DataError):
    pass


class SingularStainMatrixError(DataError):
    pass


class NoSaffronColumnError(DataError):
    pass


class NoSignalError(DataError):
    pass


class EmptyRegionError(DataError):
    pass


class DegenerateRegressionError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class ManifestError(DataError):
    pass


class DocumentFormatError(DataError):
    """Malformed stain-matrix, model, spec or report document"""


class CmapFormatError(DataError):
    """Malformed concentration-map file"""


class BadMagicError(CmapFormatError):
    pass


class UnsupportedVersionError(CmapFormatError):
    pass


class TruncatedPayloadError(CmapFormatError):
    pass


class DimensionOverflowError(CmapFormatError):
    pass


class TrailingBytesError(CmapFormatError):
    pass


class FeatureSpecError(DataError):
    """Model feature list or window does not match the feature extractor"""
