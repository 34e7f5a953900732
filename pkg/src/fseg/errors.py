"""Exception types shared across the package."""


class FsegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(FsegError):
    pass


class DtypeMismatchError(FsegError):
    pass


class GeometryError(FsegError):
    pass


class LayoutError(FsegError):
    """A spectrum is in the wrong layout (natural vs shifted) for an operation."""


class SymmetryViolationError(FsegError):
    """A half-spectrum's self-conjugate bins carry a non-negligible imaginary part."""


class ComplexLossError(FsegError):
    pass


class DetachedGraphError(FsegError):
    pass


class NanGradientError(FsegError):
    pass


class VolumeFormatError(FsegError):
    """Corrupt header, size mismatch, or unsupported dtype in volume files."""


class DegenerateSpecError(FsegError):
    pass


class TooFewItemsError(FsegError):
    pass


class ConfigError(FsegError):
    pass
