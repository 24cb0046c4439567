"""Exception hierarchy shared across the package."""


class RecBenchError(Exception):
    """Base class for all package errors."""


class ConfigError(RecBenchError):
    """Invalid user-supplied configuration (maps to CLI exit code 2)."""


class UnknownModel(ConfigError):
    pass


class InvalidSpace(ConfigError):
    pass


class InvalidConfig(RecBenchError):
    pass


class InvalidVector(RecBenchError):
    pass


class InvalidSpec(ConfigError):
    pass


class InvalidSchedule(ConfigError):
    pass


class IoError(RecBenchError):
    pass


class ParseError(RecBenchError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingRating(RecBenchError):
    pass


class EmptyDataset(RecBenchError):
    pass


class SaturatedUser(RecBenchError):
    pass


class DivergedTraining(RecBenchError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite parameters after epoch {epoch}")
        self.epoch = epoch


class InvalidUser(RecBenchError):
    pass


class EmptyAggregate(RecBenchError):
    pass


class DuplicateTrial(RecBenchError):
    pass


class NumericalFailure(RecBenchError):
    pass


class UnknownParam(RecBenchError):
    pass


class CorruptCheckpoint(RecBenchError):
    pass
