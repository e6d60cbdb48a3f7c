"""Exception hierarchy shared by all vern modules."""


class VernError(Exception):
    """Base class for everything raised deliberately by this package."""


class ShapeError(VernError):
    """Operand dimensions are incompatible."""


class ParameterError(VernError):
    """A configuration value is outside its allowed range."""


class DataError(VernError):
    """Input data is numerically invalid (non-finite, wrong domain)."""


class ValidationError(VernError):
    """A manifest or dataset violates its declared invariants."""


class FormatError(VernError):
    """A binary file does not match the expected layout."""


class CheckpointError(VernError):
    """A checkpoint file is unreadable or incompatible with the model."""


class MetricError(VernError):
    """A metric is undefined for the given score/label sets."""


class StratificationError(VernError):
    """The dataset cannot be split into stratified folds."""


class TrainingError(VernError):
    """The training set does not support optimization (e.g. single class)."""
