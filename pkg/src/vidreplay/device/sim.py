"""A scripted GUI state machine that stands in for a phone in tests.

Screens carry element lists; transitions map (screen, action pattern) to a
successor screen. Unmatched actions leave the screen unchanged. Back uses an
implicit visit stack unless the screen defines an explicit back transition.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import cv2
import numpy as np

from ..actions import BACK, ReplayAction
from ..errors import DeviceError, InputError, ValidationError
from ..perception import Rect
from .base import ScreenCapture

DEFAULT_SIZE = (180, 320)
TRANSITION_ACTIONS = ("tap", "scroll", "input", "back")


@dataclass(frozen=True)
class SimElement:
    id: int
    rect: Rect
    text: str = ""
    clickable: bool = False
    editable: bool = False
    scrollable: bool = False
    element_class: str = ""

    @property
    def center(self) -> tuple[int, int]:
        x, y, w, h = self.rect
        return x + w // 2, y + h // 2

    def contains(self, point: tuple[int, int]) -> bool:
        x, y, w, h = self.rect
        return x <= point[0] < x + w and y <= point[1] < y + h

    @property
    def widget_class(self) -> str:
        if self.element_class:
            return self.element_class
        if self.editable:
            return "android.widget.EditText"
        return "android.widget.Button" if self.clickable else "android.widget.TextView"


@dataclass(frozen=True)
class SimScreen:
    id: str
    elements: tuple[SimElement, ...]
    render: str = "auto"

    def element(self, element_id: int) -> SimElement | None:
        return next((e for e in self.elements if e.id == element_id), None)


@dataclass(frozen=True)
class Transition:
    source: str
    action: str
    match: tuple[tuple[str, object], ...]
    target: str

    @property
    def key(self) -> tuple:
        return (self.source, self.action, self.match)

    def describe(self) -> str:
        return f"{self.source} --{self.action} {dict(self.match)}--> {self.target}"


@dataclass(frozen=True)
class SimApp:
    screens: dict[str, SimScreen]
    transitions: tuple[Transition, ...]
    initial: str
    bug_screens: frozenset[str] = frozenset()
    size: tuple[int, int] = DEFAULT_SIZE
    base_dir: str = ""

    def __post_init__(self):
        validate_app(self)

    def successors(self, screen_id: str, action: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == screen_id and t.action == action]


def _element_from_dict(data: dict, where: str) -> SimElement:
    try:
        rect = tuple(int(v) for v in data["rect"])
        if len(rect) != 4:
            raise ValueError
        return SimElement(
            id=int(data["id"]),
            rect=rect,
            text=str(data.get("text", "")),
            clickable=bool(data.get("clickable", False)),
            editable=bool(data.get("editable", False)),
            scrollable=bool(data.get("scrollable", False)),
            element_class=str(data.get("class", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: element needs integer 'id' and 4-number 'rect' ({data!r})") from exc


def _matches_element(match: dict, element: SimElement) -> bool:
    if "id" in match and int(match["id"]) != element.id:
        return False
    if "text" in match and match["text"] != element.text:
        return False
    return "id" in match or "text" in match


def validate_app(app: SimApp) -> None:
    """Check every structural invariant; errors name the offending entry."""
    if app.initial not in app.screens:
        raise ValidationError(f"initial screen {app.initial!r} is not defined")
    for name in app.bug_screens:
        if name not in app.screens:
            raise ValidationError(f"bug screen {name!r} is not defined")
    width, height = app.size
    for sid, screen in app.screens.items():
        seen = set()
        for el in screen.elements:
            if el.id in seen:
                raise ValidationError(f"screen {sid!r}: duplicate element id {el.id}")
            seen.add(el.id)
            x, y, w, h = el.rect
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
                raise ValidationError(f"screen {sid!r}: element {el.id} rect {el.rect} outside {width}x{height}")
    keys = set()
    for t in app.transitions:
        where = t.describe()
        for endpoint in (t.source, t.target):
            if endpoint not in app.screens:
                raise ValidationError(f"transition {where}: unknown screen {endpoint!r}")
        if t.action not in TRANSITION_ACTIONS:
            raise ValidationError(f"transition {where}: unknown action {t.action!r}")
        if t.key in keys:
            raise ValidationError(f"duplicate transition key {where}")
        keys.add(t.key)
        match = dict(t.match)
        screen = app.screens[t.source]
        if t.action in ("tap", "input"):
            if not any(_matches_element(match, el) for el in screen.elements):
                raise ValidationError(f"transition {where}: no element on {t.source!r} matches {match}")
        if t.action == "input" and "value" not in match:
            raise ValidationError(f"transition {where}: input transitions need a 'value' (or '*')")
        if t.action == "scroll" and match.get("direction") not in ("up", "down"):
            raise ValidationError(f"transition {where}: scroll needs direction up or down")
    # Overlapping patterns (same element by id and by text) would make the
    # successor depend on rule order, so reject them.
    for sid, screen in app.screens.items():
        for el in screen.elements:
            taps = [t for t in app.successors(sid, "tap") if _matches_element(dict(t.match), el)]
            if len(taps) > 1:
                raise ValidationError(f"screen {sid!r}: element {el.id} has {len(taps)} tap transitions")
            inputs: dict[object, int] = {}
            for t in app.successors(sid, "input"):
                if _matches_element(dict(t.match), el):
                    value = dict(t.match)["value"]
                    inputs[value] = inputs.get(value, 0) + 1
                    if inputs[value] > 1:
                        raise ValidationError(f"screen {sid!r}: element {el.id} has repeated input rule for {value!r}")
        if len(app.successors(sid, "back")) > 1:
            raise ValidationError(f"screen {sid!r}: more than one back transition")


def app_from_dict(data: dict, base_dir: str = "") -> SimApp:
    if "initial" not in data:
        raise ValidationError("app definition has no 'initial' screen")
    screens = {}
    for sid, body in (data.get("screens") or {}).items():
        elements = tuple(_element_from_dict(e, f"screen {sid!r}") for e in body.get("elements", []))
        screens[sid] = SimScreen(id=sid, elements=elements, render=str(body.get("render", "auto")))
    transitions = []
    for t in data.get("transitions", []):
        try:
            transitions.append(
                Transition(
                    source=str(t["from"]),
                    action=str(t["action"]),
                    match=tuple(sorted((t.get("match") or {}).items())),
                    target=str(t["to"]),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"transition {t!r} lacks {exc.args[0]!r}") from exc
    size = tuple(int(v) for v in data.get("size", DEFAULT_SIZE))
    return SimApp(
        screens=screens,
        transitions=tuple(transitions),
        initial=str(data["initial"]),
        bug_screens=frozenset(data.get("bug_screens", [])),
        size=size,
        base_dir=base_dir,
    )


def load_sim_app(path: str | os.PathLike) -> SimApp:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"app definition {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"app definition {path} is not valid JSON: {exc}") from exc
    return app_from_dict(data, base_dir=str(path.parent))


def _seeded(screen_id: str) -> np.random.Generator:
    digest = hashlib.sha256(f"sim-screen:{screen_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def render_screen(screen: SimScreen, size: tuple[int, int] = DEFAULT_SIZE, values: dict[int, str] | None = None) -> np.ndarray:
    """Deterministic synthetic render: a screen-specific banded backdrop with
    every element drawn as a labelled box."""
    width, height = size
    rng = _seeded(screen.id)
    canvas = np.empty((height, width, 3), dtype=np.uint8)
    canvas[:] = rng.integers(150, 250, size=3)
    y = 0
    # Distinct band layout per screen keeps different screens far apart in embedding space.
    while y < height:
        band = int(rng.integers(12, 60))
        canvas[y : y + band] = rng.integers(40, 250, size=3)
        y += band
    canvas[:28] = rng.integers(20, 120, size=3)
    values = values or {}
    for el in screen.elements:
        x, y0, w, h = el.rect
        fill = (255, 255, 255) if el.editable else (235, 235, 235)
        cv2.rectangle(canvas, (x, y0), (x + w - 1, y0 + h - 1), fill, thickness=-1)
        cv2.rectangle(canvas, (x, y0), (x + w - 1, y0 + h - 1), (60, 60, 60), thickness=1)
        label = values.get(el.id, el.text)
        if label:
            cv2.putText(canvas, label, (x + 4, y0 + min(h - 4, 14)), cv2.FONT_HERSHEY_SIMPLEX, 0.4, (20, 20, 20), 1, cv2.LINE_AA)
    return canvas


def hierarchy_xml(screen: SimScreen, size: tuple[int, int] = DEFAULT_SIZE, values: dict[int, str] | None = None) -> str:
    """View-hierarchy dump in the device bridge's format."""
    width, height = size
    values = values or {}
    root = ET.Element("hierarchy", rotation="0")
    frame = ET.SubElement(
        root,
        "node",
        {
            "class": "android.widget.FrameLayout",
            "text": "",
            "bounds": f"[0,0][{width},{height}]",
            "clickable": "false",
            "scrollable": "false",
            "focusable": "false",
            "enabled": "true",
        },
    )
    for el in screen.elements:
        x, y, w, h = el.rect
        ET.SubElement(
            frame,
            "node",
            {
                "class": el.widget_class,
                "resource-id": f"sim:id/e{el.id}",
                "text": values.get(el.id, el.text),
                "bounds": f"[{x},{y}][{x + w},{y + h}]",
                "clickable": str(el.clickable or el.editable).lower(),
                "scrollable": str(el.scrollable).lower(),
                "focusable": str(el.clickable or el.editable).lower(),
                "enabled": "true",
            },
        )
    return ET.tostring(root, encoding="unicode")


@dataclass
class SimDevice:
    """DeviceAdapter backed by a SimApp."""

    app: SimApp
    clock: Callable[[], float] = time.time
    current: str = ""
    stack: list[str] = field(default_factory=list)
    visited: list[str] = field(default_factory=list)
    values: dict[tuple[str, int], str] = field(default_factory=dict)
    connected: bool = True
    captures: int = 0
    actions: int = 0

    def __post_init__(self):
        if not self.current:
            self.current = self.app.initial
        self.visited.append(self.current)
        self._renders: dict[str, np.ndarray] = {}

    @property
    def screen(self) -> SimScreen:
        return self.app.screens[self.current]

    @property
    def bug_reached(self) -> bool:
        return any(s in self.app.bug_screens for s in self.visited)

    def disconnect(self) -> None:
        self.connected = False

    def _check(self) -> None:
        if not self.connected:
            raise DeviceError("simulated device is disconnected")

    def _screen_values(self) -> dict[int, str]:
        return {eid: v for (sid, eid), v in self.values.items() if sid == self.current}

    def _pixels(self) -> np.ndarray:
        values = self._screen_values()
        if values:
            return render_screen(self.screen, self.app.size, values)
        if self.current not in self._renders:
            if self.screen.render == "auto":
                pixels = render_screen(self.screen, self.app.size)
            else:
                source = Path(self.app.base_dir) / self.screen.render
                bgr = cv2.imread(str(source), cv2.IMREAD_COLOR)
                if bgr is None:
                    raise DeviceError(f"cannot read screen raster {source}")
                pixels = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
            pixels.setflags(write=False)
            self._renders[self.current] = pixels
        return self._renders[self.current]

    def capture(self) -> ScreenCapture:
        self._check()
        self.captures += 1
        pixels = self._pixels()
        return ScreenCapture(
            capture_id=f"cap-{self.captures:04d}",
            pixels=pixels,
            hierarchy=hierarchy_xml(self.screen, self.app.size, self._screen_values()),
            taken_at=self.clock(),
            screen_id=self.current,
        )

    def _hit(self, rect: Rect | None) -> SimElement | None:
        if rect is None:
            return None
        x, y, w, h = rect
        point = (x + w // 2, y + h // 2)
        hits = [el for el in self.screen.elements if el.contains(point)]
        return hits[-1] if hits else None  # later elements are drawn on top

    def _go(self, target: str) -> None:
        self.stack.append(self.current)
        self.current = target
        self.visited.append(target)

    def act(self, action: ReplayAction, resolved_rect: Rect | None = None) -> None:
        self._check()
        if action.kind == "end":
            raise InputError("[end] has no device effect and must not be sent to the device")
        self.actions += 1
        if action.kind == "tap" and action.target == BACK:
            explicit = self.app.successors(self.current, "back")
            if explicit:
                self.current = explicit[0].target
                self.visited.append(self.current)
            elif self.stack:
                self.current = self.stack.pop()
                self.visited.append(self.current)
            return
        if action.kind == "scroll":
            for t in self.app.successors(self.current, "scroll"):
                if dict(t.match).get("direction") == action.direction:
                    self._go(t.target)
                    return
            return
        element = self._hit(resolved_rect)
        if action.kind == "tap":
            if element is None:
                return
            for t in self.app.successors(self.current, "tap"):
                if _matches_element(dict(t.match), element):
                    self._go(t.target)
                    return
            return
        if action.kind == "input":
            if element is None or not element.editable:
                name = "nothing" if element is None else f"element {element.id}"
                raise DeviceError(f"input targets {name} on {self.current!r}, which is not editable")
            self.values[(self.current, element.id)] = action.value
            exact = wildcard = None
            for t in self.app.successors(self.current, "input"):
                match = dict(t.match)
                if _matches_element(match, element):
                    if match["value"] == action.value:
                        exact = t
                    elif match["value"] == "*":
                        wildcard = t
            chosen = exact or wildcard
            if chosen is not None:
                self._go(chosen.target)
