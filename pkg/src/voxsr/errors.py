"""Exception types raised across the package."""


class VoxSRError(Exception):
    """Base class for all package errors."""


class MalformedHeader(VoxSRError, ValueError):
    pass


class ShapeError(VoxSRError, ValueError):
    pass


class IoError(VoxSRError, OSError):
    pass


class DomainError(VoxSRError, ValueError):
    """Query coordinate outside the normalized [-1, 1] domain."""


class ConfigError(VoxSRError, ValueError):
    pass


class NumericalError(VoxSRError, ArithmeticError):
    """A loss or decoded value became NaN or infinite."""


class MalformedCheckpoint(VoxSRError, ValueError):
    pass
