"""Exception hierarchy shared by all dimma modules."""


class DimmaError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(DimmaError, ValueError):
    pass


class RangeError(DimmaError, ValueError):
    pass


class UnsupportedFormat(DimmaError, ValueError):
    pass


class EmptyInput(DimmaError, ValueError):
    pass


class NoObservedBins(DimmaError, ValueError):
    pass


class UnfittedStats(DimmaError, ValueError):
    pass


class NonFiniteLoss(DimmaError, FloatingPointError):
    pass


class InvalidConfig(DimmaError, ValueError):
    pass


class TooSmall(DimmaError, ValueError):
    pass


class NoPairsFound(DimmaError):
    pass


class MissingSubdir(DimmaError):
    pass


class DimensionMismatch(DimmaError, ValueError):
    pass


class EmptyDataset(DimmaError):
    pass


class EmptyCorpus(DimmaError):
    pass


class UnknownFilename(DimmaError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown filename"


class CheckpointError(DimmaError):
    pass
