"""Scene-by-scene replay of a recording on a device.

For each action scene the region of interest is chosen once. The engine
then compares the device screen with the scene's pre-action state. When
they agree it replays the scene's action. When they disagree it takes
exploratory actions until they agree or the budget runs out. A last turn
asks the model to confirm completion with ``[end]``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .actions import BACK, ReplayAction, parse_action, render_action
from .comparison import ConsistencyVerdict, RoiSelection, compare_state, select_roi
from .device.base import DeviceAdapter, ScreenCapture
from .errors import (
    BackendError,
    DeviceError,
    GroundingError,
    InferenceError,
    InputError,
    InvocationError,
    ReplayError,
    SelectionError,
)
from .perception import DEFAULT_QUERIES, AnnotatedScreen, RegionDetector, annotate_marks, emphasize_roi, extract_elements
from .recording import EmbeddingBackend, Recording, prepare_recording
from .segmentation import ActionScene, OcrBackend, SegmentationParams, segment
from .vlm import UsageRecord, VlmClient, account, as_client, build_action_prompt
from .vlm.client import COST_DECIMALS

logger = logging.getLogger(__name__)

STATUSES = ("reproduced", "budget_exhausted", "error")

__all__ = [
    "ReplayAction",
    "parse_action",
    "render_action",
    "ReplayBudget",
    "ReplayStep",
    "ReplayTrace",
    "Backends",
    "infer_action",
    "execute",
    "annotate_capture",
    "replay_scenes",
    "reproduce",
]


@dataclass(frozen=True)
class ReplayBudget:
    max_explore_per_scene: int = 5
    max_total_steps: int = 50

    def __post_init__(self):
        if self.max_explore_per_scene < 0 or self.max_total_steps < 1:
            raise InputError("budget values must be non-negative (explore) and positive (total steps)")

    @classmethod
    def from_dict(cls, data: dict) -> "ReplayBudget":
        return cls(**{k: int(data[k]) for k in ("max_explore_per_scene", "max_total_steps") if k in data})


@dataclass(frozen=True)
class ReplayStep:
    scene_index: int
    mode: str
    verdict: ConsistencyVerdict
    action: ReplayAction
    screen_before: str
    screen_after: str
    usage: UsageRecord

    def __post_init__(self):
        if self.mode not in ("replay", "explore"):
            raise InputError(f"unknown step mode {self.mode!r}")
        if (self.mode == "replay") != self.verdict.consistent:
            raise InputError(f"{self.mode} step with consistent={self.verdict.consistent}")

    def to_dict(self) -> dict:
        return {
            "scene": self.scene_index,
            "mode": self.mode,
            "verdict": self.verdict.to_dict(),
            "action": render_action(self.action),
            "screen_before": self.screen_before,
            "screen_after": self.screen_after,
            "usage": _usage_dict(self.usage),
        }


def _usage_dict(usage: UsageRecord) -> dict:
    d = usage.to_dict()
    d.pop("phase")
    d["cost"] = round(d["cost"], COST_DECIMALS)
    return d


@dataclass
class ReplayTrace:
    steps: list[ReplayStep] = field(default_factory=list)
    status: str = "reproduced"
    usage_log: list[UsageRecord] = field(default_factory=list)
    wall_time: float = 0.0
    scene_count: int = 0
    error: str = ""
    bug_reached: bool | None = None

    @property
    def totals(self) -> UsageRecord:
        out = UsageRecord()
        for rec in self.usage_log:
            out = out + rec
        return out

    @property
    def explore_steps(self) -> int:
        return sum(1 for s in self.steps if s.mode == "explore")

    def to_dict(self) -> dict:
        totals = _usage_dict(self.totals)
        data: dict[str, Any] = {
            "status": self.status,
            "scenes": self.scene_count,
            "steps": [s.to_dict() for s in self.steps],
            "totals": totals,
            "phases": account(self.usage_log).to_dict(),
            "usage_log": [u.to_dict() for u in self.usage_log],
            "wall_time": self.wall_time,
        }
        if self.bug_reached is not None:
            data["bug_reached"] = self.bug_reached
        if self.error:
            data["error"] = self.error
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


@dataclass
class Backends:
    embedding: EmbeddingBackend
    ocr: OcrBackend | None
    detector: RegionDetector
    vlm: VlmClient
    queries: tuple[str, ...] = DEFAULT_QUERIES
    include_post_action: bool = True


def annotate_capture(capture: ScreenCapture) -> AnnotatedScreen:
    width, height = capture.size
    elements = extract_elements(capture.hierarchy, screen_size=(width, height))
    return annotate_marks(capture.pixels, elements, capture_id=capture.capture_id)


def infer_action(
    scene: ActionScene,
    verdict: ConsistencyVerdict,
    roi: RoiSelection,
    current: AnnotatedScreen,
    vlm,
    final: bool = False,
) -> tuple[ReplayAction, UsageRecord]:
    """Ask for the next action; the target mark must exist on ``current``."""
    marks = current.mark_ids
    if verdict.consistent:
        images = [emphasize_roi(scene.first_frame.pixels, roi.region.rect), scene.last_frame.pixels, current.pixels]
        request = build_action_prompt("consistent", images, scene.action_type, marks, final=final)
    else:
        request = build_action_prompt("inconsistent", [scene.first_frame.pixels, current.pixels], None, marks)

    def grounded(action: ReplayAction) -> None:
        mark = action.mark_id
        if mark is not None and mark not in marks:
            raise GroundingError(f"mark {mark} is not on the current screen; marks are {marks}")

    try:
        response = as_client(vlm).invoke(request, validate=grounded)
    except InvocationError as exc:
        last = exc.attempts[-1] if exc.attempts else {}
        if last.get("kind") == "GroundingError":
            raise GroundingError(last["error"]) from exc
        raise InferenceError(f"no usable action: {exc}") from exc
    return response.parsed, response.usage


def execute(action: ReplayAction, device: DeviceAdapter, current: AnnotatedScreen) -> ScreenCapture:
    """Perform ``action`` and return the capture taken afterwards."""
    if action.kind != "end":
        rect = None
        if action.kind in ("tap", "input") and action.target != BACK:
            element = current.element(action.mark_id)
            if element is None:
                raise GroundingError(f"mark {action.mark_id} is not on capture {current.capture_id}")
            rect = element.rect
        device.act(action, rect)
    return device.capture()


def replay_scenes(
    scenes: list[ActionScene],
    device: DeviceAdapter,
    backends: Backends,
    budget: ReplayBudget = ReplayBudget(),
) -> ReplayTrace:
    """The replay loop over already-segmented scenes."""
    client = backends.vlm
    trace = ReplayTrace(scene_count=len(scenes))
    mark = len(client.ledger)
    exhausted = False
    last_consistent: ConsistencyVerdict | None = None

    def room() -> bool:
        if len(trace.steps) >= budget.max_total_steps:
            logger.warning("total step budget of %d reached", budget.max_total_steps)
            return False
        return True

    try:
        capture = device.capture()
        for index, scene in enumerate(scenes):
            roi = select_roi(scene, backends.detector, client, backends.queries)
            explored = 0
            while True:
                if not room():
                    exhausted = True
                    break
                verdict = compare_state(
                    scene, roi, capture.pixels, client, capture.capture_id, backends.include_post_action
                )
                current = annotate_capture(capture)
                if verdict.consistent:
                    action, usage = infer_action(scene, verdict, roi, current, client)
                    after = execute(action, device, current)
                    step = ReplayStep(
                        index, "replay", verdict, action, capture.capture_id, after.capture_id, verdict.usage + usage
                    )
                    trace.steps.append(step)
                    capture, last_consistent = after, verdict
                    break
                if explored >= budget.max_explore_per_scene:
                    logger.info("scene %d: exploration budget of %d spent", index, budget.max_explore_per_scene)
                    exhausted = True
                    break
                action, usage = infer_action(scene, verdict, roi, current, client)
                after = execute(action, device, current)
                step = ReplayStep(
                    index, "explore", verdict, action, capture.capture_id, after.capture_id, verdict.usage + usage
                )
                trace.steps.append(step)
                capture = after
                explored += 1
            if exhausted and len(trace.steps) >= budget.max_total_steps:
                break

        if not scenes:
            raise InferenceError("no action scenes were found in the recording")
        if not exhausted and not room():
            # Every scene replayed, but no step left to confirm with [end].
            exhausted = True
        if not exhausted:
            scene = scenes[-1]
            current = annotate_capture(capture)
            action, usage = infer_action(scene, last_consistent, roi, current, client, final=True)
            after = execute(action, device, current)
            trace.steps.append(
                ReplayStep(len(scenes), "replay", last_consistent, action, capture.capture_id, after.capture_id, usage)
            )
            if action.kind != "end":
                exhausted = True
        trace.status = "budget_exhausted" if exhausted else "reproduced"
    except (BackendError, InvocationError, SelectionError, InferenceError, DeviceError) as exc:
        logger.error("replay aborted: %s", exc)
        trace.status = "error"
        trace.error = f"{type(exc).__name__}: {exc}"
    trace.usage_log = list(client.ledger[mark:])
    if hasattr(device, "bug_reached"):
        trace.bug_reached = bool(device.bug_reached)
    return trace


def reproduce(
    recording: Recording,
    device: DeviceAdapter,
    backends: Backends,
    budget: ReplayBudget = ReplayBudget(),
    params: SegmentationParams = SegmentationParams(),
    clock: Callable[[], float] = time.perf_counter,
) -> ReplayTrace:
    """Segment ``recording`` and replay it on ``device``. Never raises for
    backend or device failures; those end the trace with status ``error``."""
    started = clock()
    try:
        prepared = prepare_recording(recording, backends.embedding)
        scenes = segment(prepared, backends.ocr, params).scenes
    except ReplayError as exc:
        trace = ReplayTrace(status="error", error=f"{type(exc).__name__}: {exc}")
    else:
        trace = replay_scenes(scenes, device, backends, budget)
    trace.wall_time = clock() - started
    return trace
