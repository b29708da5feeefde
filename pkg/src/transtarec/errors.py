"""Exception hierarchy shared by every module."""


class TransTARecError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(TransTARecError, ValueError):
    pass


# ingestion
class FormatError(TransTARecError):
    """More than half of the input lines failed to parse."""


class EmptyCorpus(TransTARecError):
    pass


# model
class DegenerateNormal(TransTARecError, ArithmeticError):
    """The normal-vector fusion layer produced a (near) zero vector."""


class NonUnitNormal(TransTARecError, ValueError):
    pass


class EmptyCandidates(TransTARecError, ValueError):
    pass


# training
class ExhaustedCandidates(TransTARecError):
    """Fewer eligible negative POIs than requested."""


class NonFiniteGradient(TransTARecError, ArithmeticError):
    pass


class EmptyTrainingSet(TransTARecError):
    pass


# evaluation
class VocabMismatch(TransTARecError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptyTestSet(TransTARecError):
    pass


class MismatchedConfig(TransTARecError, ValueError):
    pass


# persistence
class IoError(TransTARecError, OSError):
    pass


class BadMagic(TransTARecError):
    pass


class UnsupportedVersion(TransTARecError):
    pass


class ShapeMismatch(TransTARecError):
    pass


class ParseError(TransTARecError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
