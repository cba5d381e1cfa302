"""Exception hierarchy shared by every module."""


class TVBridgeError(Exception):
    """Base class for all package errors."""


class GeometryError(TVBridgeError, ValueError):
    pass


class NonDivisibleGeometry(GeometryError):
    pass


class GeometryMismatch(GeometryError):
    pass


class NonDivisibleLength(GeometryError):
    pass


class ShapeMismatch(TVBridgeError, ValueError):
    pass


class LengthMismatch(ShapeMismatch):
    pass


class NonFiniteLoss(TVBridgeError, ArithmeticError):
    pass


class IndexOutOfRange(TVBridgeError, IndexError):
    pass


class EmptyHistory(TVBridgeError, ValueError):
    pass


class InsufficientSamples(TVBridgeError, ValueError):
    pass


class MixedModalityBatch(TVBridgeError, ValueError):
    pass


class FrozenBundle(TVBridgeError, RuntimeError):
    pass


class EmptyCorpus(TVBridgeError, ValueError):
    pass


class EmptySubset(TVBridgeError, ValueError):
    pass


class WindowTooLarge(TVBridgeError, ValueError):
    pass


class InfeasibleShape(TVBridgeError, ValueError):
    pass


class NoReferences(TVBridgeError, ValueError):
    pass


class OutpainterContractViolation(TVBridgeError, RuntimeError):
    pass


class ParseError(TVBridgeError, ValueError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class EmptyFile(TVBridgeError, ValueError):
    pass


class UnsupportedFormat(TVBridgeError, ValueError):
    pass


class CorruptHeader(TVBridgeError, ValueError):
    pass


class ChecksumMismatch(TVBridgeError, ValueError):
    pass


class VersionUnsupported(TVBridgeError, ValueError):
    pass


class MissingCheckpoint(TVBridgeError, FileNotFoundError):
    pass


class ConfigError(TVBridgeError, ValueError):
    pass
