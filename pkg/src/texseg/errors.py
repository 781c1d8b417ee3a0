"""Exception hierarchy shared by every stage of the pipeline."""


class TexsegError(Exception):
    """Base class for all library errors."""


class ImageIOError(TexsegError):
    pass


class NotFound(ImageIOError, FileNotFoundError):
    pass


class UnsupportedFormat(ImageIOError):
    pass


class CorruptData(ImageIOError):
    pass


class OutOfBounds(TexsegError, IndexError):
    pass


class DimensionMismatch(TexsegError, ValueError):
    pass


class SizeMismatch(DimensionMismatch):
    pass


class RegionTooSmall(TexsegError, ValueError):
    pass


class TooManyLevels(TexsegError, ValueError):
    pass


class PointOutOfBounds(OutOfBounds):
    pass


class InvalidSpec(TexsegError, ValueError):
    pass


class SingularHomography(TexsegError, ValueError):
    pass


class InvalidStep(TexsegError, ValueError):
    pass


class EmptyScaleSet(InvalidStep):
    pass


class ImageTooSmall(TexsegError, ValueError):
    pass


class NotDivisibleBy3(TexsegError, ValueError):
    pass


class RowTooShort(TexsegError, ValueError):
    pass


class BadThresholds(TexsegError, ValueError):
    pass


class InvalidRegion(TexsegError, ValueError):
    pass


class OverlapError(TexsegError, ValueError):
    pass
