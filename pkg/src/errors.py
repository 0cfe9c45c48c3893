"""
例外定義モジュール
数値モジュールは例外を送出し、CLI層でまとめて捕捉・ログ出力します。
"""


class TtfsError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TtfsError):
    """Matrix or vector has the wrong shape for the operation."""


class ConvergenceError(TtfsError):
    """Iterative solver hit its iteration cap."""


class EncodingDomainError(TtfsError):
    """Input intensities outside [0, 1]."""


class InvalidSlopeError(TtfsError):
    """Slope-at-threshold B_i <= 0, the spike time is undefined."""


class InfeasibleMappingError(TtfsError):
    """No SNN with the requested alpha reproduces the given ReLU layer."""


class PolicyError(TtfsError):
    """Operation is not defined under the layer's alpha policy."""


class ShapeMismatchError(TtfsError):
    """SNN and ANN (or parameters and gradients) do not line up."""


class IdxFormatError(TtfsError):
    """Malformed IDX dataset file."""


class CheckpointVersionError(TtfsError):
    """Checkpoint written by an unknown format version."""


class CheckpointCorruptError(TtfsError):
    """Checkpoint failed magic or checksum verification."""


class ConfigError(TtfsError):
    """Invalid experiment configuration."""
