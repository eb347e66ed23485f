"""Exception types shared across the toolkit."""


class NormkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidShape(NormkitError):
    """A tensor shape is malformed (wrong rank, zero or negative dims, too small)."""


class ShapeMismatch(NormkitError):
    """Two operands that must agree in shape do not."""


class InvalidArgument(NormkitError):
    """A scalar or enum argument is outside its allowed range."""


class InvalidPadding(NormkitError):
    """Reflect padding wider than the input allows."""


class MissingForward(NormkitError):
    """A backward pass was invoked without (or with a mismatched) forward cache."""


class DegenerateInput(NormkitError):
    """An input plane violates a numeric precondition (e.g. zero spatial sum)."""


class NotCalibrated(NormkitError):
    """Eval-mode batch norm requested before any training batch was seen."""


class FormatError(NormkitError):
    """A file does not conform to its declared binary format.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InputError(NormkitError):
    """An input file or dataset is unusable; message names the path."""


class Diverged(NormkitError):
    """Training produced a non-finite loss; carries the step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
