"""Exception types shared across the package.

Each error maps to a stable nonzero CLI exit code (see cli.EXIT_CODES).
"""


class SelfEchoError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SelfEchoError):
    pass


class NonFinite(SelfEchoError):
    pass


class NoGraph(SelfEchoError):
    pass


class BadConfig(SelfEchoError):
    pass


class TooShort(SelfEchoError):
    pass


class InputTooLong(SelfEchoError):
    pass


class BadCutoff(SelfEchoError):
    pass


class UnsupportedFormat(SelfEchoError):
    pass


class CorruptHeader(SelfEchoError):
    pass


class CorruptFile(SelfEchoError):
    pass


class FactorOutOfRange(SelfEchoError):
    pass


class ParseError(SelfEchoError):
    pass


class DuplicateEntry(SelfEchoError):
    pass


class NotEnoughData(SelfEchoError):
    pass


class BadSpec(SelfEchoError):
    pass


class MissingPart(SelfEchoError):
    pass


class EmptyCorpus(SelfEchoError):
    pass


class CorruptCheckpoint(SelfEchoError):
    pass


class IoFailure(SelfEchoError):
    pass


class MissingGroundTruth(SelfEchoError):
    pass


class LengthMismatch(SelfEchoError):
    pass
