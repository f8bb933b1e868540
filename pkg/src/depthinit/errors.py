"""Exception hierarchy shared by every module."""


class DepthInitError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DepthInitError, ValueError):
    pass


class UnsupportedConfiguration(DepthInitError):
    pass


class NoValidK(DepthInitError):
    """The target variance admits no K > 1 for the given depth and width."""


class CorruptFile(DepthInitError):
    pass


class CorruptRecord(CorruptFile):
    pass


class Divergence(DepthInitError):
    """Training produced a non-finite loss."""
