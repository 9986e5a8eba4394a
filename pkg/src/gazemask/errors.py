"""Exception hierarchy. Every error raised by the package derives from :class:`GazemaskError`."""


class GazemaskError(Exception):
    pass


class ConfigError(GazemaskError, ValueError):
    """Invalid configuration or manifest (CLI exit code 2)."""


# ingest
class MalformedRow(GazemaskError, ValueError):
    def __init__(self, row_index: int, reason: str):
        super().__init__(f"row {row_index}: {reason}")
        self.row_index = row_index


class NonMonotonicTimestamps(GazemaskError, ValueError):
    pass


class TooShort(GazemaskError, ValueError):
    pass


class OutOfRangeResponse(GazemaskError, ValueError):
    pass


class KeyMismatch(GazemaskError, ValueError):
    pass


class InsufficientParticipants(GazemaskError, ValueError):
    pass


# featurize
class NoObservedSamples(GazemaskError, ValueError):
    pass


class StatisticalVariantNotSequential(GazemaskError, ValueError):
    pass


class LeakageError(GazemaskError, RuntimeError):
    """Test-fold data reached a fitting step."""


# split
class TooShortForSegmentation(GazemaskError, ValueError):
    pass


class ClassTooSmall(GazemaskError, ValueError):
    pass


class TooFewParticipants(GazemaskError, ValueError):
    pass


# model / train
class NonFiniteActivation(GazemaskError, FloatingPointError):
    pass


class NonFiniteGradient(GazemaskError, FloatingPointError):
    pass


class NonFiniteUpdate(GazemaskError, FloatingPointError):
    pass


class EmptyTrainingSet(GazemaskError, ValueError):
    pass


class DivergedTraining(GazemaskError, RuntimeError):
    pass


# baseline
class SingleClassTrainingSet(GazemaskError, ValueError):
    pass


# eval
class EmptyEvaluation(GazemaskError, ValueError):
    pass


class TooFewFolds(GazemaskError, ValueError):
    pass


# synth
class InvalidSpec(ConfigError):
    pass
