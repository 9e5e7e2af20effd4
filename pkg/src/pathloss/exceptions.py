"""Exception hierarchy.

The three top-level classes map onto CLI exit codes: configuration problems
exit with 2, bad input data with 3 and numerical/compute failures with 4.
"""


class PathlossError(Exception):
    exit_code = 1


class ConfigError(PathlossError, ValueError):
    exit_code = 2


class DataError(PathlossError, ValueError):
    exit_code = 3


class ComputeError(PathlossError, RuntimeError):
    exit_code = 4


# geodesy
class OutOfProjectionRange(DataError):
    pass


class MixedOrigins(DataError):
    pass


class CoincidentPoints(DataError):
    pass


class ZeroDistance(DataError):
    pass


# raster
class MalformedHeader(DataError):
    pass


class RowLengthMismatch(DataError):
    pass


class NonNumericCell(DataError):
    pass


class OutOfExtent(DataError):
    pass


class NoDataNeighborhood(DataError):
    pass


class ZeroLengthPath(DataError):
    pass


class EmptyNeighborhood(DataError):
    pass


# diffraction / features
class NonPositiveGeometry(DataError):
    pass


class DegenerateProfile(DataError):
    pass


# empirical
class UnsupportedModel(ConfigError):
    pass


# reference
class InsufficientReferencePoints(ComputeError):
    pass


class BaselineMismatch(DataError):
    pass


class UnknownModelBaseline(DataError):
    pass


class UnknownEarfcn(DataError):
    pass


# simulator
class EmptyGrid(DataError):
    pass


# augment
class TooFewSamples(DataError):
    pass


class InvalidK(ConfigError):
    pass


# learner
class NonFiniteFeature(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptModel(DataError):
    pass


# ensemble / evaluation
class EmptyValidation(DataError):
    pass


class EmptyInput(DataError):
    pass


class LengthMismatch(DataError):
    pass


class MissingDataset(DataError):
    pass
