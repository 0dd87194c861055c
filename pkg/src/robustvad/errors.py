"""Exception taxonomy shared by every robustvad module.

CLI exit-code mapping: ConfigurationError -> 2, NumericError -> 3,
everything else propagates as an ordinary failure.
"""


class RobustVadError(Exception):
    """Base class for package errors."""


class ConfigurationError(RobustVadError):
    """Invalid configuration value or combination (CLI exit code 2)."""


class FormatError(RobustVadError):
    """Malformed on-disk artifact (video file, checkpoint, manifest, labels)."""


class ContractError(RobustVadError):
    """Caller violated an API precondition (shape/length/range mismatch)."""


class EmptyInputError(ContractError):
    """An aggregate/reduction was asked to run over zero elements."""


class EmptyResultError(ContractError):
    """An operation would produce zero usable elements (e.g. N < chunk_size)."""


class NumericError(RobustVadError):
    """Non-finite value encountered mid-computation (CLI exit code 3).

    Carries optional context so callers can report where the blow-up happened
    and, for attacks, the partial trace accumulated up to the failure.
    """

    def __init__(self, message, chunk_index=None, trace=None):
        super().__init__(message)
        self.chunk_index = chunk_index
        self.trace = trace


class NoForegroundError(RobustVadError):
    """Saliency thresholding produced an all-background mask."""


class UndefinedAUCError(RobustVadError):
    """AUROC requested on a single-class label set."""
