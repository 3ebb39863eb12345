"""Exception hierarchy.

`DataError` subclasses signal bad inputs (exit code 2 on the command line);
everything else derives from `CanopyError` directly.
"""


class CanopyError(Exception):
    pass


class DataError(CanopyError):
    pass


class ZeroEnergy(DataError):
    """Noise-subtracted waveform carries no positive energy."""


class LengthExceeded(DataError):
    pass


class DegenerateVariance(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFinite(CanopyError):
    pass


class EmptyRegion(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoBins(DataError):
    pass


class UnknownKey(DataError):
    pass


class Unachievable(DataError):
    pass


class NoValidShots(DataError):
    pass
