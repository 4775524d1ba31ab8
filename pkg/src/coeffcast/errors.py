"""Exception hierarchy shared by every coeffcast module."""


class CoeffcastError(Exception):
    """Base class; ``kind`` is the machine-readable tag the CLI prints."""

    kind = "error"


class FormatError(CoeffcastError, ValueError):
    kind = "format"


class CorruptionError(CoeffcastError, ValueError):
    kind = "corruption"


class ValidationError(CoeffcastError, ValueError):
    kind = "validation"


class ShapeError(CoeffcastError, ValueError):
    kind = "shape"


class ParameterError(CoeffcastError, ValueError):
    kind = "parameter"


class AlignmentError(CoeffcastError, ValueError):
    kind = "alignment"


class LengthError(CoeffcastError, ValueError):
    kind = "length"


class DataError(CoeffcastError, ValueError):
    kind = "data"


class ConfigError(CoeffcastError, ValueError):
    kind = "config"


class DivergenceError(CoeffcastError, RuntimeError):
    kind = "divergence"
