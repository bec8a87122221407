"""Exception hierarchy shared across the package."""


class OctQuantError(Exception):
    """Base class for all package errors."""


# container parsing
class ParseError(OctQuantError):
    pass


class UnrecognizedMagic(ParseError):
    pass


class TruncatedFile(ParseError):
    pass


class UnsupportedVariant(ParseError):
    pass


class MissingField(ParseError):
    pass


class ShapeMismatch(ParseError):
    pass


class LayerUnavailable(OctQuantError):
    pass


# image conditioning
class ImageNarrowerThanPad(OctQuantError):
    pass


class FlatMap(OctQuantError):
    """Probability map has no unique peak."""


# measurement
class FoveaColumnInvalid(OctQuantError):
    pass


class EmptyRoi(OctQuantError):
    pass


class EmptyRegionInRoi(OctQuantError):
    pass


class NoFoveaAnywhere(OctQuantError):
    pass


class SingleBscanVolume(OctQuantError):
    pass


class FoveaOutsideMap(OctQuantError):
    pass


class WindowExceedsLength(OctQuantError):
    pass


# SLO
class EmptyMask(OctQuantError):
    pass


class EmptySkeleton(OctQuantError):
    pass


class NoVessels(OctQuantError):
    pass


class NoUsableSegments(OctQuantError):
    pass


class EmptyDiscMask(OctQuantError):
    pass


class NonSquareInput(OctQuantError):
    pass


# statistics
class ZeroVariance(OctQuantError):
    pass


class DegenerateAnova(OctQuantError):
    pass


class ZeroBetweenEyeSD(OctQuantError):
    pass


class SingleTimepoint(OctQuantError):
    pass


# pipeline
class EmptyDirectory(OctQuantError):
    pass


class MaskShapeMismatch(OctQuantError):
    pass


class ConfigError(OctQuantError):
    pass


# Non-fatal conditions. The pipeline records these in the process log.
class OctQuantWarning(UserWarning):
    pass


class AllZeroImage(OctQuantWarning):
    pass


class ZeroColumnMean(OctQuantWarning):
    pass


class NegativeThickness(OctQuantWarning):
    pass


class NoIntersection(OctQuantWarning):
    pass


class RoiClipped(OctQuantWarning):
    pass


class AllZeroSector(OctQuantWarning):
    pass


class DiscUndetected(OctQuantWarning):
    pass


class ZoneExceedsImage(OctQuantWarning):
    pass


class FoveaTie(OctQuantWarning):
    pass


class UnderCount(OctQuantWarning):
    """Fewer than six vessels available for a summary calibre."""


class IncompleteSegmentation(OctQuantWarning):
    pass


class MissingLandmark(OctQuantWarning):
    """Fovea or optic disc not available; a geometric fallback is used."""
