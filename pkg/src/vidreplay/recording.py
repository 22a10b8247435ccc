"""Frame ingestion, luminance extraction and frame embeddings.

A :class:`Recording` is an ordered, immutable list of :class:`Frame` values.
Derived rasters (luminance, embedding) are attached with
:func:`dataclasses.replace`, never in place.
"""

from __future__ import annotations

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import cv2
import numpy as np
from PIL import Image, ImageSequence

from .errors import BackendError, DegenerateInputError, InputError, StateError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
VIDEO_SUFFIXES = (".mp4", ".m4v", ".mov", ".avi", ".gif")

# BT.601 luma weights for R, G, B.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

DEFAULT_DIRECTORY_FPS = 30.0
UNIT_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Frame:
    index: int
    timestamp: float
    pixels: np.ndarray
    luminance: np.ndarray | None = None
    embedding: np.ndarray | None = None

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True, eq=False)
class Recording:
    frames: tuple[Frame, ...]
    fps: float
    source_path: str = ""

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DegenerateInputError(
                f"recording {self.source_path!r} has {len(self.frames)} frame(s); need at least 2"
            )
        if self.fps <= 0:
            raise InputError(f"fps must be positive, got {self.fps}")
        for i, frame in enumerate(self.frames):
            if frame.index != i:
                raise InputError(f"frame at position {i} carries index {frame.index}")
            if i and frame.timestamp < self.frames[i - 1].timestamp:
                raise InputError(f"timestamps decrease at frame {i}")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> Frame:
        return self.frames[i]

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) of every frame."""
        return self.frames[0].width, self.frames[0].height

    def with_frames(self, frames: Sequence[Frame]) -> "Recording":
        return replace(self, frames=tuple(frames))


def from_arrays(
    rasters: Sequence[np.ndarray], fps: float = DEFAULT_DIRECTORY_FPS, source_path: str = "<memory>"
) -> Recording:
    """Build a recording from in-memory RGB rasters (used by generators and tests)."""
    frames = []
    for i, raster in enumerate(rasters):
        frames.append(Frame(index=i, timestamp=i / fps, pixels=_check_rgb(raster, i)))
    _check_dimensions(frames, source_path)
    return Recording(frames=tuple(frames), fps=float(fps), source_path=source_path)


def _check_rgb(raster: np.ndarray, i: int) -> np.ndarray:
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[2] != 3:
        raise InputError(f"frame {i}: expected an HxWx3 RGB raster, got shape {raster.shape}")
    if raster.dtype != np.uint8:
        raster = np.clip(raster, 0, 255).astype(np.uint8)
    raster.setflags(write=False)
    return raster


def _check_dimensions(frames: Sequence[Frame], source: str) -> None:
    if not frames:
        return
    shape = frames[0].pixels.shape
    for frame in frames[1:]:
        if frame.pixels.shape != shape:
            raise InputError(
                f"{source}: frame {frame.index} is {frame.pixels.shape[1]}x{frame.pixels.shape[0]}, "
                f"first frame fixed {shape[1]}x{shape[0]}"
            )


def resample_indices(n_source: int, source_fps: float, sample_fps: float) -> list[int]:
    """Source frame indices kept when resampling ``n_source`` frames to ``sample_fps``.

    Sample ``k`` sits at time ``k / sample_fps`` and takes the latest source
    frame whose timestamp does not exceed it.
    """
    if sample_fps <= 0:
        raise InputError(f"sample_fps must be positive, got {sample_fps}")
    duration = n_source / source_fps
    n_out = math.ceil(duration * sample_fps - 1e-9)
    return [min(n_source - 1, int(math.floor(k * source_fps / sample_fps + 1e-9))) for k in range(n_out)]


def _read_directory(path: Path) -> tuple[list[np.ndarray], float]:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    rasters = []
    for p in files:
        bgr = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if bgr is None:
            raise InputError(f"cannot decode image {p}")
        rasters.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    return rasters, DEFAULT_DIRECTORY_FPS


def _read_gif(path: Path) -> tuple[list[np.ndarray], float]:
    try:
        image = Image.open(path)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    rasters, durations = [], []
    for frame in ImageSequence.Iterator(image):
        rasters.append(np.asarray(frame.convert("RGB")))
        durations.append(frame.info.get("duration", 100) or 100)
    fps = 1000.0 / (sum(durations) / len(durations)) if durations else DEFAULT_DIRECTORY_FPS
    return rasters, fps


def _read_video(path: Path) -> tuple[list[np.ndarray], float]:
    capture = cv2.VideoCapture(str(path))
    if not capture.isOpened():
        raise InputError(f"cannot open video {path}")
    fps = capture.get(cv2.CAP_PROP_FPS) or DEFAULT_DIRECTORY_FPS
    rasters = []
    try:
        while True:
            ok, bgr = capture.read()
            if not ok:
                break
            rasters.append(cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB))
    finally:
        capture.release()
    return rasters, float(fps)


def load_recording(path: str | os.PathLike, sample_fps: float | None = None) -> Recording:
    """Decode a video file or a directory of ordered frame images.

    Frames are kept at the source rate unless ``sample_fps`` is given.
    Luminance and embeddings are not computed here.
    """
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file or directory: {p}")
    if p.is_dir():
        rasters, fps = _read_directory(p)
    elif p.suffix.lower() == ".gif":
        rasters, fps = _read_gif(p)
    elif p.suffix.lower() in VIDEO_SUFFIXES:
        rasters, fps = _read_video(p)
    elif p.suffix.lower() in IMAGE_SUFFIXES:
        rasters, fps = [cv2.cvtColor(cv2.imread(str(p)), cv2.COLOR_BGR2RGB)], DEFAULT_DIRECTORY_FPS
    else:
        raise InputError(f"unsupported recording format: {p.suffix or p.name}")

    if len(rasters) < 2:
        raise DegenerateInputError(f"{p} has {len(rasters)} decodable frame(s); need at least 2")

    if sample_fps is not None:
        keep = resample_indices(len(rasters), fps, sample_fps)
        rasters = [rasters[i] for i in keep]
        fps = float(sample_fps)
    logger.debug("loaded %d frames from %s at %.3f fps", len(rasters), p, fps)
    return from_arrays(rasters, fps=fps, source_path=str(p))


def write_frame_cache(recording: Recording, out_dir: str | os.PathLike) -> Path:
    """Dump every frame as ``frames/NNNNNN.png`` under ``out_dir``."""
    target = Path(out_dir) / "frames"
    target.mkdir(parents=True, exist_ok=True)
    for frame in recording.frames:
        cv2.imwrite(str(target / f"{frame.index:06d}.png"), cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR))
    return target


def luminance_of(pixels: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB raster on the 0..255 integer scale."""
    y = pixels.astype(np.float64) @ LUMA_WEIGHTS
    out = np.clip(np.rint(y), 0, 255).astype(np.uint8)
    out.setflags(write=False)
    return out


def to_luminance(frame: Frame) -> Frame:
    return replace(frame, luminance=luminance_of(frame.pixels))


class EmbeddingBackend(Protocol):
    """Image encoder contract.

    ``input_size`` is (width, height); ``encode`` receives a float32 array of
    shape (height, width, channels) with values in [0, 1] and returns a 1-D
    vector (need not be normalized).
    """

    name: str
    input_size: tuple[int, int]
    channels: int

    def encode(self, image: np.ndarray) -> np.ndarray: ...


def prepare_for_backend(luminance: np.ndarray, backend: EmbeddingBackend) -> np.ndarray:
    """Normalize to [0, 1], resize bilinearly and replicate the single channel."""
    scaled = luminance.astype(np.float32) / 255.0
    w, h = backend.input_size
    if scaled.shape != (h, w):
        scaled = cv2.resize(scaled, (w, h), interpolation=cv2.INTER_LINEAR)
    return np.repeat(scaled[:, :, None], backend.channels, axis=2)


def embed(frame: Frame, backend: EmbeddingBackend) -> Frame:
    if frame.luminance is None:
        raise StateError(f"frame {frame.index} has no luminance; call to_luminance first")
    image = prepare_for_backend(frame.luminance, backend)
    try:
        vector = np.asarray(backend.encode(image), dtype=np.float64).ravel()
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(
            f"embedding backend {getattr(backend, 'name', backend)!r} failed on frame {frame.index}",
            diagnostics={"error": repr(exc)},
        ) from exc
    norm = float(np.linalg.norm(vector))
    if not np.isfinite(norm) or norm == 0.0:
        raise BackendError(
            f"embedding backend returned a degenerate vector for frame {frame.index}",
            diagnostics={"norm": norm},
        )
    vector = vector / norm
    vector.setflags(write=False)
    return replace(frame, embedding=vector)


def prepare_recording(recording: Recording, backend: EmbeddingBackend) -> Recording:
    """Populate luminance and embeddings on every frame."""
    frames = [embed(to_luminance(f), backend) for f in recording.frames]
    return recording.with_frames(frames)


def _seed_from(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass
class StubEmbeddingBackend:
    """Deterministic stand-in for an image encoder.

    Output for an input image ``x`` (H x W x C in [0, 1]):

    1. ``g`` = channel mean of ``x``, flattened row-major;
    2. ``v`` = ``g - mean(g)`` with one extra trailing component ``bias``;
    3. output = ``P @ v`` where ``P`` is a ``dim x (H*W + 1)`` standard-normal
       matrix drawn from ``numpy.random.default_rng(s)`` and ``s`` is the first
       8 bytes (little endian) of ``sha256("stub-embedding:<seed>")``.

    Centering makes cosine similarity track the pixel correlation of two
    frames, so small pixel jitter moves the similarity only slightly while
    unrelated screens land near orthogonal.
    """

    seed: str = "0"
    dim: int = 256
    input_size: tuple[int, int] = (64, 64)
    channels: int = 3
    bias: float = 0.05
    name: str = "stub"
    _projection: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def projection(self) -> np.ndarray:
        if self._projection is None:
            w, h = self.input_size
            rng = np.random.default_rng(_seed_from(f"stub-embedding:{self.seed}"))
            self._projection = rng.standard_normal((self.dim, w * h + 1))
        return self._projection

    def encode(self, image: np.ndarray) -> np.ndarray:
        g = np.asarray(image, dtype=np.float64).mean(axis=2).ravel()
        v = np.append(g - g.mean(), self.bias)
        return self.projection @ v


class ClipEmbeddingBackend:
    """CLIP image encoder via ``transformers`` (optional dependency)."""

    channels = 3
    _MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
    _STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32", device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise BackendError("CLIP backend needs torch and transformers", {"error": repr(exc)}) from exc
        self._torch = torch
        self.name = model_name
        self.device = device
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        side = int(self.model.config.vision_config.image_size)
        self.input_size = (side, side)

    def encode(self, image: np.ndarray) -> np.ndarray:  # pragma: no cover - needs model weights
        x = (np.asarray(image, dtype=np.float32) - self._MEAN) / self._STD
        tensor = self._torch.from_numpy(x.transpose(2, 0, 1)[None]).to(self.device)
        with self._torch.no_grad():
            features = self.model.get_image_features(pixel_values=tensor)
        return features[0].cpu().numpy()
