"""Exception hierarchy shared by every femseg module."""


class FemsegError(Exception):
    """Base class; ``reason`` is the short machine-readable tag used by the CLI."""

    @property
    def reason(self) -> str:
        return type(self).__name__


class DegenerateRange(FemsegError, ValueError):
    pass


class EmptyForeground(FemsegError, ValueError):
    pass


class DimensionMismatch(FemsegError, ValueError):
    pass


class ShapeMismatch(FemsegError, ValueError):
    pass


class IndivisibleDims(FemsegError, ValueError):
    pass


class ConfigError(FemsegError, ValueError):
    pass


class DataError(FemsegError, ValueError):
    pass


class GridMismatch(FemsegError, ValueError):
    pass


class EmptyMask(FemsegError, ValueError):
    pass


class EmptyInput(FemsegError, ValueError):
    pass


class FormatError(FemsegError, ValueError):
    pass


class LengthMismatch(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class UnsupportedFeature(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class MissingTensor(FormatError):
    pass


class VersionMismatch(FormatError):
    pass
