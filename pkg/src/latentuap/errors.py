"""Exception types raised across the package."""


class LatentUapError(Exception):
    """Base class for all package errors."""


# audio I/O
class UnreadableFile(LatentUapError):
    pass


class MultiChannelUnsupported(LatentUapError):
    pass


class SchemaMismatch(LatentUapError):
    pass


# dsp
class InvalidWindow(LatentUapError, ValueError):
    pass


class InvalidRate(LatentUapError, ValueError):
    pass


class EmptyInput(LatentUapError, ValueError):
    pass


class TooShort(LatentUapError, ValueError):
    pass


class EmptyValues(LatentUapError, ValueError):
    pass


class InvalidBandwidth(LatentUapError, ValueError):
    pass


# models
class ShapeError(LatentUapError, ValueError):
    pass


class AlphabetError(LatentUapError, ValueError):
    pass


class ConvergenceFailure(LatentUapError):
    pass


# preparation / optimizer
class NoViableCandidate(LatentUapError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class ZeroVector(LatentUapError, ValueError):
    pass


# metrics
class EmptyReference(LatentUapError, ValueError):
    pass


class AllExcluded(LatentUapError, ValueError):
    pass


class SingleClass(LatentUapError, ValueError):
    pass


# countermeasures / theory / runtime
class WrongKind(LatentUapError, ValueError):
    pass


class DegeneratePair(LatentUapError, ValueError):
    pass


class GeometryMismatch(LatentUapError, ValueError):
    pass
