"""Exception hierarchy shared by every module of the package."""


class TgvadError(Exception):
    """Base class; the CLI maps subclasses to exit categories."""

    category = "error"


class ShapeError(TgvadError, ValueError):
    category = "shape"


class NumericError(TgvadError, ArithmeticError):
    category = "numeric"


class ConfigError(TgvadError, ValueError):
    category = "config"


class ContractError(TgvadError, ValueError):
    category = "contract"


class AlignmentError(TgvadError, ValueError):
    category = "alignment"


class MetricUndefinedError(TgvadError, ValueError):
    category = "metric"


class TrainingError(TgvadError, RuntimeError):
    category = "training"


class BackendError(TgvadError, RuntimeError):
    """LLM backend failure. ``retriable`` tells callers whether a retry makes sense."""

    category = "backend"

    def __init__(self, message, video_id=None, retriable=True):
        super().__init__(message)
        self.video_id = video_id
        self.retriable = retriable


class FeatureFileError(TgvadError, ValueError):
    category = "io"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class VersionMismatchError(FeatureFileError):
    pass
