"""Exception hierarchy.

Every error raised by the pipeline derives from :class:`SpecpipeError` and
belongs to one of three families that the command line maps to exit codes:
configuration (1), data (2) and numerical (3).
"""


class SpecpipeError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ConfigError(SpecpipeError, ValueError):
    exit_code = 1


class DataError(SpecpipeError, ValueError):
    exit_code = 2


class NumericalError(SpecpipeError, ArithmeticError):
    exit_code = 3


# manifest
class ManifestError(DataError):
    pass


class DuplicateClipId(ManifestError):
    pass


class DuplicateParticipant(ManifestError):
    pass


class UnknownLabel(ManifestError):
    pass


class UnknownTask(ManifestError):
    pass


class ConflictingLabel(ManifestError):
    pass


class MalformedDate(ManifestError):
    pass


class MalformedManifest(ManifestError):
    pass


class EmptySplit(ManifestError):
    pass


# audio
class AudioError(DataError):
    pass


class UnsupportedEncoding(AudioError):
    pass


class TruncatedFile(AudioError):
    pass


class ZeroSamples(AudioError):
    pass


class InputTooShort(DataError):
    pass


# spectral
class DegenerateBand(ConfigError):
    pass


class FrequencyOutOfRange(ConfigError):
    pass


class EmptyResponseList(DataError):
    pass


# model
class ShapeMismatch(DataError):
    pass


class EmptyClass(DataError):
    pass


class EmptyDataset(DataError):
    pass


class DegenerateBatch(DataError):
    pass


class NonFiniteGradient(NumericalError):
    pass


# evaluation
class EmptyGroup(DataError):
    pass


class IdMismatch(DataError):
    pass


class SingleClassInput(DataError):
    pass


class MissingRun(DataError):
    pass


class IoFailure(SpecpipeError, OSError):
    exit_code = 2
