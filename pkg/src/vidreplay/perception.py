"""Machine-readable views of GUI screens.

Covers candidate interactive regions on recording frames (open-vocabulary
detector plus non-max suppression), element lists from device view
hierarchies, numbered set-of-mark overlays and the before/after composite
used to pick the region of interest.
"""

from __future__ import annotations

import base64
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import cv2
import numpy as np

from .errors import BackendError, InputError, ParseError
from .segmentation import pixel_digest

logger = logging.getLogger(__name__)

Rect = tuple[int, int, int, int]  # x, y, width, height

DEFAULT_QUERIES = ("button", "text field", "search bar", "icon", "list item", "tab", "checkbox", "layout")
SCORE_THRESHOLD = 0.3
IOU_THRESHOLD = 0.5

MARK_OUTLINE = 2
MARK_FONT = cv2.FONT_HERSHEY_SIMPLEX
MARK_FONT_SCALE = 0.45
MARK_PAD = 2
MARK_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (0, 128, 128),
    (128, 0, 0),
    (0, 0, 128),
)

DIVIDER = 8
HEADER = 24
REGION_COLOR = (255, 0, 0)
ROI_THICKNESS = 4
ROI_COLOR = (255, 0, 255)


@dataclass(frozen=True)
class Region:
    index: int
    rect: Rect
    score: float
    phrase: str = ""

    def to_dict(self) -> dict:
        return {"index": self.index, "rect": list(self.rect), "score": self.score, "phrase": self.phrase}


@dataclass(frozen=True)
class GuiElement:
    mark_id: int
    rect: Rect
    text: str = ""
    element_class: str = ""
    clickable: bool = False
    editable: bool = False
    scrollable: bool = False
    resource_id: str = ""

    @property
    def center(self) -> tuple[int, int]:
        x, y, w, h = self.rect
        return x + w // 2, y + h // 2


@dataclass(frozen=True, eq=False)
class AnnotatedScreen:
    pixels: np.ndarray
    elements: tuple[GuiElement, ...]
    raw_pixels: np.ndarray
    capture_id: str = ""

    def element(self, mark_id: int) -> GuiElement | None:
        for el in self.elements:
            if el.mark_id == mark_id:
                return el
        return None

    @property
    def mark_ids(self) -> list[int]:
        return [el.mark_id for el in self.elements]


def iou(a: Rect, b: Rect) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def clip_rect(rect: Sequence[float], width: int, height: int) -> Rect | None:
    """Clip to the raster; None when nothing is left."""
    x, y, w, h = (float(v) for v in rect)
    x1, y1 = max(0, int(round(x))), max(0, int(round(y)))
    x2, y2 = min(width, int(round(x + w))), min(height, int(round(y + h)))
    if x2 <= x1 or y2 <= y1:
        return None
    return (x1, y1, x2 - x1, y2 - y1)


def non_max_suppression(
    boxes: Sequence[tuple[Rect, float, str]], iou_threshold: float = IOU_THRESHOLD
) -> list[tuple[Rect, float, str, int]]:
    """Greedy NMS; ties in score keep the detector's original order.

    Returns survivors as (rect, score, phrase, original_position).
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i][1], i))
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i][0], boxes[k][0]) <= iou_threshold for k in kept):
            kept.append(i)
    return [(boxes[i][0], boxes[i][1], boxes[i][2], i) for i in kept]


class RegionDetector(Protocol):
    def detect(self, pixels: np.ndarray, queries: Sequence[str]) -> list[tuple[Rect, float, str]]: ...


class ScriptedDetector:
    """Replays detections from a fixture.

    Fixture layout: ``{"default": [det, ...], "frames": {digest: [det, ...]}}``
    where ``det`` is ``{"rect": [x, y, w, h], "score": s, "phrase": p}``.
    Uniform rasters (blank frames) never produce detections.
    """

    def __init__(self, default: Iterable[dict] = (), frames: dict[str, list[dict]] | None = None):
        self.default = [self._parse(d) for d in default]
        self.frames = {k: [self._parse(d) for d in v] for k, v in (frames or {}).items()}
        self.calls = 0

    @staticmethod
    def _parse(det: dict) -> tuple[Rect, float, str]:
        return tuple(int(v) for v in det["rect"]), float(det.get("score", 1.0)), str(det.get("phrase", ""))

    @classmethod
    def from_json(cls, data: dict) -> "ScriptedDetector":
        return cls(default=data.get("default", []), frames=data.get("frames"))

    def detect(self, pixels: np.ndarray, queries: Sequence[str]) -> list[tuple[Rect, float, str]]:
        self.calls += 1
        if pixels.min() == pixels.max():
            return []
        return list(self.frames.get(pixel_digest(pixels), self.default))


class HttpDetector:  # pragma: no cover - needs a running detector service
    """Client for an open-vocabulary detection service (e.g. GroundingDINO).

    POSTs ``{"image": <base64 PNG>, "queries": [...]}`` and expects
    ``{"detections": [{"box": [x, y, w, h], "score": s, "phrase": p}]}``.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0):
        import httpx

        self.endpoint = endpoint
        self.client = httpx.Client(timeout=timeout)

    def detect(self, pixels: np.ndarray, queries: Sequence[str]) -> list[tuple[Rect, float, str]]:
        ok, png = cv2.imencode(".png", cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR))
        payload = {"image": base64.b64encode(png.tobytes()).decode("ascii"), "queries": list(queries)}
        try:
            resp = self.client.post(self.endpoint, json=payload)
            resp.raise_for_status()
            body = resp.json()
        except Exception as exc:
            raise BackendError(f"detector at {self.endpoint} failed", {"error": repr(exc)}) from exc
        return [(tuple(d["box"]), float(d["score"]), d.get("phrase", "")) for d in body.get("detections", [])]


def detect_regions(
    frame,
    detector: RegionDetector,
    queries: Sequence[str] = DEFAULT_QUERIES,
    score_threshold: float = SCORE_THRESHOLD,
    iou_threshold: float = IOU_THRESHOLD,
) -> list[Region]:
    """Detect, threshold, suppress and index candidate regions in reading order."""
    pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)
    if not queries:
        raise InputError("detector queries must not be empty")
    height, width = pixels.shape[:2]
    try:
        raw = detector.detect(pixels, list(queries))
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError("region detector failed", {"error": repr(exc)}) from exc

    boxes = []
    for rect, score, phrase in raw:
        score = min(1.0, max(0.0, float(score)))
        clipped = clip_rect(rect, width, height)
        if clipped is None or score < score_threshold:
            continue
        boxes.append((clipped, score, phrase))
    survivors = non_max_suppression(boxes, iou_threshold)
    survivors.sort(key=lambda s: (s[0][1], s[0][0], s[3]))
    return [Region(index=k, rect=r, score=s, phrase=p) for k, (r, s, p, _) in enumerate(survivors, start=1)]


_BOUNDS = re.compile(r"\[(-?\d+),(-?\d+)\]\[(-?\d+),(-?\d+)\]")


def parse_bounds(text: str) -> Rect:
    m = _BOUNDS.fullmatch(text.strip())
    if not m:
        raise ParseError(f"malformed bounds {text!r}")
    x1, y1, x2, y2 = (int(v) for v in m.groups())
    return (x1, y1, max(0, x2 - x1), max(0, y2 - y1))


def _flag(node: ET.Element, name: str) -> bool:
    return node.get(name, "false").lower() == "true"


def _is_editable(node: ET.Element) -> bool:
    return _flag(node, "editable") or "EditText" in node.get("class", "")


def _is_interactive(node: ET.Element) -> bool:
    return _flag(node, "clickable") or _flag(node, "scrollable") or _flag(node, "long-clickable") or _is_editable(node)


def _first_text(node: ET.Element) -> str:
    for n in node.iter("node"):
        text = n.get("text") or n.get("content-desc") or ""
        if text:
            return text
    return ""


def extract_elements(hierarchy: str | bytes | ET.Element, screen_size: tuple[int, int] | None = None) -> list[GuiElement]:
    """Depth-first walk of a view-hierarchy dump.

    Non-interactive nodes with a single child are collapsed into that child.
    Leaves and interactive containers become elements, numbered 1.. in DFS
    order. Invisible and zero-area nodes are skipped.
    """
    if isinstance(hierarchy, ET.Element):
        root = hierarchy
    else:
        try:
            root = ET.fromstring(hierarchy)
        except ET.ParseError as exc:
            raise ParseError(f"malformed view hierarchy: {exc}") from exc

    found: list[tuple[Rect, ET.Element, str]] = []

    def emit(node: ET.Element, text: str) -> None:
        if node.get("visible-to-user", "true").lower() == "false":
            return
        rect = parse_bounds(node.get("bounds", "[0,0][0,0]"))
        if screen_size is not None:
            clipped = clip_rect(rect, *screen_size)
            if clipped is None:
                return
            rect = clipped
        if rect[2] <= 0 or rect[3] <= 0:
            return
        found.append((rect, node, text))

    def visit(node: ET.Element) -> None:
        children = node.findall("node")
        if not children:
            emit(node, node.get("text") or node.get("content-desc") or "")
        elif len(children) == 1 and not _is_interactive(node):
            visit(children[0])
        else:
            if _is_interactive(node):
                emit(node, node.get("text") or node.get("content-desc") or _first_text(node))
            for child in children:
                visit(child)

    tops = [root] if root.tag == "node" else root.findall("node")
    for top in tops:
        visit(top)

    return [
        GuiElement(
            mark_id=i,
            rect=rect,
            text=text,
            element_class=node.get("class", ""),
            clickable=_flag(node, "clickable"),
            editable=_is_editable(node),
            scrollable=_flag(node, "scrollable"),
            resource_id=node.get("resource-id", ""),
        )
        for i, (rect, node, text) in enumerate(found, start=1)
    ]


def _text_box(text: str, scale: float = MARK_FONT_SCALE) -> tuple[int, int, int]:
    (tw, th), baseline = cv2.getTextSize(text, MARK_FONT, scale, 1)
    return tw, th, baseline


def chip_box(element_rect: Rect, label: str, raster_shape: tuple[int, ...]) -> Rect:
    """Where a mark label goes: just above the element's top-left corner,
    or inside it when there is no room above. Clipped to the raster."""
    x, y, _, _ = element_rect
    tw, th, baseline = _text_box(label)
    cw, ch = tw + 2 * MARK_PAD, th + baseline + 2 * MARK_PAD
    height, width = raster_shape[:2]
    top = y - ch if y - ch >= 0 else y
    left = min(max(0, x), max(0, width - cw))
    return (left, top, min(cw, width - left), min(ch, height - top))


def _draw_chip(canvas: np.ndarray, box: Rect, label: str, fill, ink) -> None:
    x, y, w, h = box
    cv2.rectangle(canvas, (x, y), (x + w - 1, y + h - 1), fill, thickness=-1)
    _, th, _ = _text_box(label)
    cv2.putText(canvas, label, (x + MARK_PAD, y + MARK_PAD + th), MARK_FONT, MARK_FONT_SCALE, ink, 1, cv2.LINE_AA)


def _outline(canvas: np.ndarray, rect: Rect, color, thickness: int) -> None:
    x, y, w, h = rect
    # Drawn inside the rect so it never spills past the element bounds.
    for t in range(thickness):
        if w - 2 * t <= 0 or h - 2 * t <= 0:
            break
        cv2.rectangle(canvas, (x + t, y + t), (x + w - 1 - t, y + h - 1 - t), color, thickness=1)


def mark_color(mark_id: int) -> tuple[int, int, int]:
    return MARK_PALETTE[(mark_id - 1) % len(MARK_PALETTE)]


def annotate_marks(raw_pixels: np.ndarray, elements: Sequence[GuiElement], capture_id: str = "") -> AnnotatedScreen:
    """Outline every element and label it with its mark id."""
    ordered = tuple(sorted(elements, key=lambda e: e.mark_id))
    raw = np.asarray(raw_pixels)
    canvas = raw.copy()
    height, width = raw.shape[:2]
    for el in ordered:
        if clip_rect(el.rect, width, height) != tuple(el.rect):
            raise InputError(f"element {el.mark_id} rect {el.rect} exceeds the {width}x{height} raster")
        _outline(canvas, el.rect, mark_color(el.mark_id), MARK_OUTLINE)
    # Labels after outlines so a neighbour's box never paints over a numeral.
    for el in ordered:
        label = str(el.mark_id)
        _draw_chip(canvas, chip_box(el.rect, label, raw.shape), label, mark_color(el.mark_id), (255, 255, 255))
    canvas.setflags(write=False)
    return AnnotatedScreen(pixels=canvas, elements=ordered, raw_pixels=raw, capture_id=capture_id)


def emphasize_roi(pixels: np.ndarray, rect: Rect) -> np.ndarray:
    """Copy of ``pixels`` with a thick high-contrast box around ``rect`` and no label."""
    canvas = np.asarray(pixels).copy()
    height, width = canvas.shape[:2]
    clipped = clip_rect(rect, width, height)
    if clipped is not None:
        _outline(canvas, clipped, ROI_COLOR, ROI_THICKNESS)
    return canvas


def compose_dual_view(first, last, regions: Sequence[Region]) -> np.ndarray:
    """Side-by-side BEFORE | AFTER composite with numbered regions on the left half."""
    a = first.pixels if hasattr(first, "pixels") else np.asarray(first)
    b = last.pixels if hasattr(last, "pixels") else np.asarray(last)
    if a.shape != b.shape:
        raise InputError(f"dual view needs equal frame sizes, got {a.shape} and {b.shape}")
    height, width = a.shape[:2]
    canvas = np.full((height + HEADER, 2 * width + DIVIDER, 3), 255, dtype=np.uint8)
    canvas[HEADER:, width : width + DIVIDER] = 0
    left = a.copy()
    for region in regions:
        _outline(left, region.rect, REGION_COLOR, MARK_OUTLINE)
    for region in regions:
        label = f"Region {region.index}"
        _draw_chip(left, chip_box(region.rect, label, left.shape), label, REGION_COLOR, (255, 255, 255))
    canvas[HEADER:, :width] = left
    canvas[HEADER:, width + DIVIDER :] = b
    for text, x0 in (("BEFORE", 0), ("AFTER", width + DIVIDER)):
        tw, th, _ = _text_box(text, 0.5)
        cv2.putText(canvas, text, (x0 + (width - tw) // 2, (HEADER + th) // 2), MARK_FONT, 0.5, (0, 0, 0), 1, cv2.LINE_AA)
    return canvas


@dataclass
class ElementDetector:
    """Detector that proposes fixed rectangles for every frame (e.g. from a
    known layout). Handy when the recording was rendered from known screens."""

    rects: list[Rect] = field(default_factory=list)
    score: float = 0.9
    phrase: str = "button"

    def detect(self, pixels: np.ndarray, queries: Sequence[str]) -> list[tuple[Rect, float, str]]:
        return [(r, self.score, self.phrase) for r in self.rects]
