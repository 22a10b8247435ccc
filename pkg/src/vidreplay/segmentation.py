"""Split a recording into per-action scenes.

Consecutive-frame embedding similarity drops whenever the screen changes.
A tap shows up as a single sharp dip, a scroll as a dip followed by a
gradual climb back, and an input as a dip into a frame that shows a virtual
keyboard (detected by OCR).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy.signal import find_peaks, peak_prominences

from .errors import InputError, StateError
from .recording import Frame, Recording

logger = logging.getLogger(__name__)

ACTION_TYPES = ("tap", "scroll", "input")

KEYBOARD_LETTER_ROWS = ("qwert", "asdfg", "zxcvb")
KEYBOARD_DIGIT_RUNS = ("123", "456", "789")


@dataclass(frozen=True)
class SegmentationParams:
    smooth_window: int = 3
    drop_threshold: float = 0.15
    min_scene_len: int = 3
    stable_threshold: float = 0.98
    stable_steps: int = 2
    scroll_min_frames: int = 4
    # Lower the stability bar to sit under the recording's own noise floor.
    adaptive_stability: bool = True
    noise_mad_factor: float = 6.0

    @classmethod
    def from_dict(cls, data: dict) -> "SegmentationParams":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SimilaritySeries:
    values: np.ndarray
    smoothed: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class ActionScene:
    start_frame: int
    end_frame: int
    action_type: str
    first_frame: Frame
    last_frame: Frame
    keyboard_frames: tuple[int, ...] = ()
    boundary: int | None = None

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise InputError(f"scene start {self.start_frame} must precede end {self.end_frame}")
        if self.action_type not in ACTION_TYPES:
            raise InputError(f"unknown action type {self.action_type!r}")

    def to_dict(self) -> dict:
        return {
            "start": self.start_frame,
            "end": self.end_frame,
            "type": self.action_type,
            "keyboard_frames": list(self.keyboard_frames),
        }


@dataclass(frozen=True)
class OcrResult:
    text_tokens: tuple[tuple[str, tuple[int, int, int, int]], ...] = ()
    ocr_text: str = ""
    ocr_num: str = ""

    @classmethod
    def from_tokens(cls, tokens: Iterable[tuple[str, Sequence[int]]]) -> "OcrResult":
        """Split recognized characters into an alphabetic and a numeric sequence."""
        tokens = tuple((str(t), tuple(int(v) for v in rect)) for t, rect in tokens)
        text = "".join(c for t, _ in tokens for c in t if c.isalpha())
        num = "".join(c for t, _ in tokens for c in t if c.isdigit())
        return cls(text_tokens=tokens, ocr_text=text, ocr_num=num)


class OcrBackend(Protocol):
    def recognize(self, pixels: np.ndarray) -> OcrResult: ...


def pixel_digest(pixels: np.ndarray) -> str:
    """Stable content hash of a raster, used to key scripted backends."""
    h = hashlib.sha1()
    h.update(repr(tuple(pixels.shape)).encode())
    h.update(np.ascontiguousarray(pixels).tobytes())
    return h.hexdigest()


class ScriptedOcrBackend:
    """Returns pre-recorded OCR results keyed by raster digest.

    Unknown rasters yield an empty result.
    """

    def __init__(self, results: dict[str, OcrResult] | None = None):
        self.results = dict(results or {})
        self.calls = 0

    @classmethod
    def from_json(cls, data: dict) -> "ScriptedOcrBackend":
        results = {}
        for digest, entry in data.get("frames", {}).items():
            results[digest] = OcrResult.from_tokens((t, r) for t, r in entry.get("tokens", []))
        return cls(results)

    def to_json(self) -> dict:
        return {
            "frames": {
                d: {"tokens": [[t, list(r)] for t, r in res.text_tokens]}
                for d, res in sorted(self.results.items())
            }
        }

    def recognize(self, pixels: np.ndarray) -> OcrResult:
        self.calls += 1
        return self.results.get(pixel_digest(pixels), OcrResult())


class PaddleOcrBackend:  # pragma: no cover - optional dependency, needs model weights
    """Wraps PaddleOCR's text detector and recognizer."""

    def __init__(self, lang: str = "en"):
        from paddleocr import PaddleOCR

        self._ocr = PaddleOCR(lang=lang, show_log=False)

    def recognize(self, pixels: np.ndarray) -> OcrResult:
        tokens = []
        for line in self._ocr.ocr(pixels[:, :, ::-1], cls=False)[0] or []:
            box, (text, _score) = line
            xs = [p[0] for p in box]
            ys = [p[1] for p in box]
            x, y = int(min(xs)), int(min(ys))
            tokens.append((text, (x, y, int(max(xs)) - x, int(max(ys)) - y)))
        tokens.sort(key=lambda t: (t[1][1], t[1][0]))
        return OcrResult.from_tokens(tokens)


def is_keyboard_frame(ocr_result: OcrResult) -> bool:
    text = ocr_result.ocr_text.lower()
    if any(row in text for row in KEYBOARD_LETTER_ROWS):
        return True
    return any(run in ocr_result.ocr_num for run in KEYBOARD_DIGIT_RUNS)


def frame_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two unit vectors mapped affinely onto [0, 1]."""
    value = (float(np.dot(a, b)) + 1.0) / 2.0
    return min(1.0, max(0.0, round(value, 12)))


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; edges average over the neighbours that exist."""
    if window <= 1 or len(values) == 0:
        return np.asarray(values, dtype=np.float64).copy()
    kernel = np.ones(window)
    sums = np.convolve(values, kernel, mode="same")
    counts = np.convolve(np.ones(len(values)), kernel, mode="same")
    return sums / counts


def similarity_series(recording: Recording, smooth_window: int = 3) -> SimilaritySeries:
    embeddings = []
    for frame in recording.frames:
        if frame.embedding is None:
            raise StateError(f"frame {frame.index} has no embedding")
        embeddings.append(frame.embedding)
    values = np.array(
        [frame_similarity(embeddings[i], embeddings[i + 1]) for i in range(len(embeddings) - 1)]
    )
    return SimilaritySeries(values=values, smoothed=moving_average(values, smooth_window))


def detect_boundaries(series: SimilaritySeries, params: SegmentationParams = SegmentationParams()) -> list[int]:
    """Indices of similarity dips that mark the start of a user action.

    Candidate dips are the local minima of the smoothed series; each is
    snapped to the lowest raw value within the smoothing window and kept if
    its raw prominence reaches ``drop_threshold``. Dips not separated by a
    stable stretch belong to the same transition, which is reported at its
    onset (the first unstable step). Boundaries closer than
    ``min_scene_len`` merge, keeping the deepest.
    """
    raw = np.asarray(series.values, dtype=np.float64)
    if raw.size == 0:
        raise InputError("similarity series is empty")
    if raw.size < 3:
        # Too short for a local minimum; treat a deep drop from 1 as a dip.
        low = int(np.argmin(raw))
        return [low] if 1.0 - raw[low] >= params.drop_threshold else []

    smoothed = series.smoothed if series.smoothed is not None else moving_average(raw, params.smooth_window)
    half = max(params.smooth_window, 1) // 2
    # Pad so dips at either end of the series still count as local minima.
    padded = np.concatenate(([1.0], smoothed, [1.0]))
    candidates, _ = find_peaks(-padded)
    raw_padded = np.concatenate(([1.0], raw, [1.0]))

    snapped = set()
    for c in candidates - 1:
        lo, hi = max(0, c - half), min(raw.size, c + half + 1)
        snapped.add(lo + int(np.argmin(raw[lo:hi])))
    if not snapped:
        return []
    ordered = sorted(snapped)
    prominences = peak_prominences(-raw_padded, np.array(ordered) + 1)[0]
    dips = [(p, i) for p, i in zip(prominences, ordered) if p >= params.drop_threshold]

    # A new action starts only once the screen has settled: dips with no
    # stable stretch between them belong to one transition, and the boundary
    # is the onset of that transition's run of unstable steps.
    threshold = effective_stable_threshold(raw, params)
    transitions: list[list] = []  # [onset, depth]
    for depth, idx in sorted(dips, key=lambda d: d[1]):
        if transitions and not _has_stable_run(raw[transitions[-1][0] + 1 : idx], params.stable_steps, threshold):
            transitions[-1][1] = max(transitions[-1][1], depth)
            continue
        onset = int(idx)
        floor = transitions[-1][0] + 1 if transitions else 0
        while onset - 1 >= floor and raw[onset - 1] < threshold:
            onset -= 1
        transitions.append([onset, depth])

    kept: list[int] = []
    for onset, _ in sorted(transitions, key=lambda t: (-t[1], t[0])):
        if all(abs(onset - k) >= params.min_scene_len for k in kept):
            kept.append(onset)
    return sorted(int(k) for k in kept)


def _has_stable_run(values: np.ndarray, steps: int, threshold: float) -> bool:
    run = 0
    for v in values:
        run = run + 1 if v >= threshold else 0
        if run >= steps:
            return True
    return False


def effective_stable_threshold(values: np.ndarray, params: SegmentationParams) -> float:
    """Stability bar actually applied to a series.

    With ``adaptive_stability`` the configured threshold is lowered to
    ``median - noise_mad_factor * 1.4826 * MAD`` when that is smaller, so a
    uniformly jittery recording still has stable stretches.
    """
    if not params.adaptive_stability or len(values) == 0:
        return params.stable_threshold
    median = float(np.median(values))
    mad = float(np.median(np.abs(values - median)))
    floor = median - params.noise_mad_factor * 1.4826 * mad
    return min(params.stable_threshold, floor)


def _slope(y: np.ndarray) -> float:
    if len(y) < 2:
        return 0.0
    x = np.arange(len(y), dtype=np.float64)
    return float(np.polyfit(x, y, 1)[0])


def classify_action(
    series: SimilaritySeries | Sequence[float],
    scene_window: tuple[int, int],
    keyboard_flags: Sequence[bool] = (),
    params: SegmentationParams = SegmentationParams(),
    stable_threshold: float | None = None,
) -> str:
    """Label the series window ``[start, end)`` as tap, scroll or input.

    Any keyboard-flagged frame makes the scene an input. Otherwise the run of
    unstable steps around the deepest dip is measured from its onset: a run of
    at least ``scroll_min_frames`` steps whose least-squares slope is positive
    is a scroll (drop, then gradual climb back); anything shorter is a tap.
    """
    if any(keyboard_flags):
        return "input"
    values = np.asarray(series.values if isinstance(series, SimilaritySeries) else series, dtype=np.float64)
    start, end = scene_window
    start, end = max(0, start), min(len(values), end)
    if end - start < 1:
        return "tap"
    window = values[start:end]
    threshold = params.stable_threshold if stable_threshold is None else stable_threshold
    dip = int(np.argmin(window))
    if window[dip] >= threshold:
        return "tap"
    onset = dip
    while onset > 0 and window[onset - 1] < threshold:
        onset -= 1
    recovered = next((j for j in range(dip + 1, len(window)) if window[j] >= threshold), len(window))
    climb = window[onset : recovered + 1]
    if recovered - onset >= params.scroll_min_frames and _slope(climb) > 0:
        return "scroll"
    return "tap"


def _stable_before(values: np.ndarray, frame: int, steps: int, threshold: float) -> bool:
    if frame < steps:
        return False
    return bool(np.all(values[frame - steps : frame] >= threshold))


def _stable_after(values: np.ndarray, frame: int, steps: int, threshold: float) -> bool:
    if frame + steps > len(values):
        return False
    return bool(np.all(values[frame : frame + steps] >= threshold))


def group_scenes(
    recording: Recording,
    boundaries: Sequence[int],
    ocr: OcrBackend | None,
    params: SegmentationParams = SegmentationParams(),
    series: SimilaritySeries | None = None,
) -> list[ActionScene]:
    """One scene per boundary, spanning the stable frames around the dip.

    ``first_frame`` is the nearest frame at or before the dip that matches its
    ``stable_steps`` predecessors; ``last_frame`` the nearest frame after the
    dip matching its successors. Searches never cross the neighbouring scene.
    Only frames after ``first_frame`` are sent to OCR.
    """
    if not boundaries:
        return []
    if series is None:
        series = similarity_series(recording, params.smooth_window)
    values = np.asarray(series.values, dtype=np.float64)
    n_frames = len(recording)
    bounds = sorted(int(b) for b in boundaries)
    if bounds[0] < 0 or bounds[-1] >= n_frames - 1:
        raise InputError(f"boundaries {bounds} fall outside the series range 0..{n_frames - 2}")

    threshold = effective_stable_threshold(values, params)
    scenes: list[ActionScene] = []
    lower = 0
    for k, b in enumerate(bounds):
        upper = bounds[k + 1] if k + 1 < len(bounds) else n_frames - 1
        start = next(
            (f for f in range(b, lower - 1, -1) if _stable_before(values, f, params.stable_steps, threshold)),
            b,
        )
        end = next(
            (f for f in range(b + 1, upper + 1) if _stable_after(values, f, params.stable_steps, threshold)),
            max(upper, b + 1),
        )
        keyboard = []
        if ocr is not None:
            for f in range(start + 1, end + 1):
                if is_keyboard_frame(ocr.recognize(recording[f].pixels)):
                    keyboard.append(f)
        flags = [f in keyboard for f in range(start + 1, end + 1)]
        action = classify_action(values, (start, end), flags, params, stable_threshold=threshold)
        scenes.append(
            ActionScene(
                start_frame=start,
                end_frame=end,
                action_type=action,
                first_frame=recording[start],
                last_frame=recording[end],
                keyboard_frames=tuple(keyboard),
                boundary=b,
            )
        )
        lower = end
    return scenes


@dataclass
class Segmentation:
    series: SimilaritySeries
    boundaries: list[int]
    scenes: list[ActionScene] = field(default_factory=list)
    params: SegmentationParams = field(default_factory=SegmentationParams)

    def scenes_json(self) -> dict:
        return scenes_to_json(self.scenes)


def segment(
    recording: Recording, ocr: OcrBackend | None, params: SegmentationParams = SegmentationParams()
) -> Segmentation:
    """Full segmentation of an embedded recording."""
    series = similarity_series(recording, params.smooth_window)
    boundaries = detect_boundaries(series, params)
    scenes = group_scenes(recording, boundaries, ocr, params, series=series)
    logger.info("segmented %d frames into %d scenes", len(recording), len(scenes))
    return Segmentation(series=series, boundaries=boundaries, scenes=scenes, params=params)


def scenes_to_json(scenes: Sequence[ActionScene]) -> dict:
    return {"scenes": [s.to_dict() for s in scenes]}


def write_series_csv(series: SimilaritySeries, path) -> None:
    smoothed = series.smoothed if series.smoothed is not None else series.values
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,similarity,smoothed\n")
        for i, (v, s) in enumerate(zip(series.values, smoothed)):
            fh.write(f"{i},{v:.6f},{s:.6f}\n")


def dump_scenes(scenes: Sequence[ActionScene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenes_to_json(scenes), fh, indent=2)
        fh.write("\n")
