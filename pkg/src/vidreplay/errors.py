"""Exception hierarchy shared by every stage of the pipeline."""


class ReplayError(Exception):
    """Base class for all errors raised by this package."""


class InputError(ReplayError, ValueError):
    """Caller supplied something unusable (bad path, wrong shape, bad precondition)."""


class DegenerateInputError(InputError):
    """Input is readable but too small to analyse (e.g. fewer than two frames)."""


class StateError(ReplayError):
    """An operation was called before a required derived field was populated."""


class BackendError(ReplayError):
    """An external model backend (embedding, OCR, detector, VLM) failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ParseError(ReplayError, ValueError):
    """A model response did not match the expected output grammar."""


class InvocationError(ReplayError):
    """A VLM call failed on every retry attempt."""

    def __init__(self, message, attempts=()):
        super().__init__(message)
        self.attempts = list(attempts)


class SelectionError(ReplayError):
    """The region-of-interest answer could not be mapped onto a detected region."""


class InferenceError(ReplayError):
    """Action inference produced no usable action."""


class GroundingError(InferenceError):
    """An inferred action references an element that is not on the current screen."""


class DeviceError(ReplayError):
    """The device bridge or simulator rejected or failed an operation."""


class ValidationError(ReplayError, ValueError):
    """A definition file (app, config, script) is internally inconsistent."""
