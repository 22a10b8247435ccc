"""Replay GUI screen recordings on a device.

Pipeline: split a recording into action scenes from frame-embedding
similarity dips, choose the region each scene acted on, compare recorded and
live screens with a vision-language model, and replay or explore until every
scene has been reproduced.
"""

from .actions import ReplayAction, parse_action, render_action
from .errors import (
    BackendError,
    DegenerateInputError,
    DeviceError,
    GroundingError,
    InferenceError,
    InputError,
    InvocationError,
    ParseError,
    ReplayError,
    SelectionError,
    StateError,
    ValidationError,
)
from .recording import Frame, Recording, StubEmbeddingBackend, load_recording, prepare_recording
from .replay import Backends, ReplayBudget, ReplayStep, ReplayTrace, reproduce
from .segmentation import ActionScene, SegmentationParams, segment

__version__ = "0.1.0"

__all__ = [
    "ActionScene",
    "BackendError",
    "Backends",
    "DegenerateInputError",
    "DeviceError",
    "Frame",
    "GroundingError",
    "InferenceError",
    "InputError",
    "InvocationError",
    "ParseError",
    "Recording",
    "ReplayAction",
    "ReplayBudget",
    "ReplayError",
    "ReplayStep",
    "ReplayTrace",
    "SegmentationParams",
    "SelectionError",
    "StateError",
    "StubEmbeddingBackend",
    "ValidationError",
    "load_recording",
    "parse_action",
    "prepare_recording",
    "render_action",
    "reproduce",
    "segment",
]
