"""Region-of-interest selection and functional-consistency checks for action scenes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InputError, InvocationError, SelectionError
from .perception import DEFAULT_QUERIES, Region, RegionDetector, compose_dual_view, detect_regions, emphasize_roi
from .segmentation import ActionScene
from .vlm import UsageRecord, as_client, build_compare_prompt, build_roi_prompt


@dataclass(frozen=True, eq=False)
class RoiSelection:
    scene: ActionScene
    region: Region
    raw_response: str
    confidence: float
    regions: tuple[Region, ...] = ()
    usage: UsageRecord = UsageRecord(phase="roi_selection")

    def to_dict(self) -> dict:
        return {"region": self.region.to_dict(), "response": self.raw_response, "confidence": self.confidence}


@dataclass(frozen=True, eq=False)
class ConsistencyVerdict:
    consistent: bool
    confidence: float
    scene: ActionScene | None
    screen_id: str
    raw_response: str = ""
    usage: UsageRecord = UsageRecord(phase="state_comparison")

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"consistent": self.consistent, "confidence": self.confidence}


def full_frame_region(pixels: np.ndarray) -> Region:
    height, width = pixels.shape[:2]
    return Region(index=1, rect=(0, 0, width, height), score=1.0, phrase="full frame")


def select_roi(
    scene: ActionScene,
    detector: RegionDetector,
    vlm,
    queries: Sequence[str] = DEFAULT_QUERIES,
) -> RoiSelection:
    """Detect candidates on the scene's first frame and let the VLM pick one.

    With no detections the whole first frame stands in as Region 1.
    """
    if scene.first_frame is None or scene.last_frame is None:
        raise InputError("scene needs first_frame and last_frame")
    client = as_client(vlm)
    started = client.clock()
    regions = detect_regions(scene.first_frame, detector, queries)
    client.record(UsageRecord(latency=client.clock() - started, phase="region_detection"))
    if not regions:
        regions = [full_frame_region(scene.first_frame.pixels)]

    def in_range(k: int) -> None:
        if not 1 <= k <= len(regions):
            raise SelectionError(f"Region {k} does not exist; valid labels are Region 1 to Region {len(regions)}")

    composite = compose_dual_view(scene.first_frame, scene.last_frame, regions)
    try:
        response = client.invoke(build_roi_prompt(composite, len(regions)), validate=in_range)
    except InvocationError as exc:
        if exc.attempts and exc.attempts[-1].get("kind") == "SelectionError":
            raise SelectionError(str(exc.attempts[-1]["error"])) from exc
        raise
    region = regions[response.parsed - 1]
    return RoiSelection(
        scene=scene,
        region=region,
        raw_response=response.text,
        confidence=response.confidence,
        regions=tuple(regions),
        usage=response.usage,
    )


def compare_state(
    scene: ActionScene,
    roi: RoiSelection,
    current_screen,
    vlm,
    screen_id: str = "",
    include_post_action: bool = True,
) -> ConsistencyVerdict:
    """Ask whether ``current_screen`` is functionally consistent with the scene's
    pre-action state. Full screens are sent; nothing is cropped."""
    if roi.scene is not scene:
        raise InputError("ROI selection belongs to a different scene")
    current = current_screen.pixels if hasattr(current_screen, "pixels") else np.asarray(current_screen)
    highlighted = emphasize_roi(scene.first_frame.pixels, roi.region.rect)
    post = scene.last_frame.pixels if include_post_action else None
    response = as_client(vlm).invoke(build_compare_prompt(highlighted, current, post))
    return ConsistencyVerdict(
        consistent=bool(response.parsed),
        confidence=response.confidence,
        scene=scene,
        screen_id=screen_id,
        raw_response=response.text,
        usage=response.usage,
    )
