"""Exception hierarchy shared across the package."""


class BiteTimingError(Exception):
    """Base class for every error raised by this package."""


class MalformedRow(BiteTimingError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class IllegalValueForKind(BiteTimingError):
    pass


class NonPositiveDuration(BiteTimingError):
    pass


class InvalidConfig(BiteTimingError):
    pass


class EmptyStream(BiteTimingError):
    pass


class DegenerateClustering(BiteTimingError):
    pass


class NonIntegerDecimation(BiteTimingError):
    pass


class InsufficientCoverage(BiteTimingError):
    pass


class InvalidSpec(BiteTimingError):
    pass


class ShapeMismatch(BiteTimingError):
    pass


class EmptyDataset(BiteTimingError):
    pass


class EmptySplit(BiteTimingError):
    pass


class DivergedLoss(BiteTimingError):
    pass


class LengthMismatch(BiteTimingError):
    pass


class EmptyInput(BiteTimingError):
    pass


class TooFewSessions(BiteTimingError):
    pass


class UnknownMask(BiteTimingError):
    pass


class MissingModel(BiteTimingError):
    pass


class MissingMouthEvents(BiteTimingError):
    pass


class NonPositiveResult(BiteTimingError):
    pass


class UnknownKind(BiteTimingError):
    pass


class NoEvents(BiteTimingError):
    pass


class IOFailure(BiteTimingError):
    pass


class UnknownCommand(BiteTimingError):
    pass


class ConfigError(BiteTimingError):
    pass
