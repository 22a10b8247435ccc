"""Real-device adapter speaking debug-bridge shell conventions.

Screenshots come from ``screencap -p``, the view hierarchy from an
accessibility dump, and gestures from ``input tap|swipe|text|keyevent``.
The bridge binary, serial and dump path are configuration.
"""

from __future__ import annotations

import shlex
import subprocess
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import cv2
import numpy as np

from ..actions import BACK, ReplayAction
from ..errors import DeviceError, InputError
from ..perception import Rect
from .base import ScreenCapture, scroll_gesture

Runner = Callable[[Sequence[str], float], bytes]

SCROLL_MS = 300
KEYCODE_BACK = 4
KEYCODE_MOVE_END = 123
KEYCODE_DEL = 67
CLEAR_REPEATS = 64


def _run(args: Sequence[str], timeout: float) -> bytes:  # pragma: no cover - needs a device
    proc = subprocess.run(list(args), capture_output=True, timeout=timeout, check=False)
    if proc.returncode != 0:
        raise DeviceError(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr.decode(errors='replace').strip()}")
    return proc.stdout


def escape_input_text(value: str) -> str:
    """``input text`` treats spaces as separators; ``%s`` is its space escape."""
    return shlex.quote(value.replace(" ", "%s"))


@dataclass
class AdbDevice:
    serial: str | None = None
    binary: str = "adb"
    dump_path: str = "/sdcard/window_dump.xml"
    timeout: float = 30.0
    runner: Runner = _run
    clock: Callable[[], float] = time.time
    captures: int = field(default=0, init=False)

    def _shell(self, *args: str) -> bytes:
        base = [self.binary] + (["-s", self.serial] if self.serial else [])
        try:
            return self.runner(base + ["shell", *args], self.timeout)
        except DeviceError:
            raise
        except Exception as exc:
            raise DeviceError(f"bridge command failed: {exc!r}") from exc

    def _exec_out(self, *args: str) -> bytes:
        base = [self.binary] + (["-s", self.serial] if self.serial else [])
        try:
            return self.runner(base + ["exec-out", *args], self.timeout)
        except DeviceError:
            raise
        except Exception as exc:
            raise DeviceError(f"bridge command failed: {exc!r}") from exc

    def screen_size(self) -> tuple[int, int]:
        shot = self.screenshot()
        return shot.shape[1], shot.shape[0]

    def screenshot(self) -> np.ndarray:
        png = self._exec_out("screencap", "-p")
        bgr = cv2.imdecode(np.frombuffer(png, dtype=np.uint8), cv2.IMREAD_COLOR)
        if bgr is None:
            raise DeviceError("screencap returned undecodable data")
        return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)

    def hierarchy(self) -> str:
        self._shell("uiautomator", "dump", self.dump_path)
        return self._exec_out("cat", self.dump_path).decode("utf-8", errors="replace")

    def capture(self) -> ScreenCapture:
        pixels = self.screenshot()
        hierarchy = self.hierarchy()
        self.captures += 1
        return ScreenCapture(
            capture_id=f"cap-{self.captures:04d}", pixels=pixels, hierarchy=hierarchy, taken_at=self.clock()
        )

    def act(self, action: ReplayAction, resolved_rect: Rect | None = None) -> None:
        if action.kind == "end":
            raise InputError("[end] has no device effect and must not be sent to the device")
        if action.kind == "tap" and action.target == BACK:
            self._shell("input", "keyevent", str(KEYCODE_BACK))
            return
        if action.kind == "scroll":
            width, height = self.screen_size()
            x1, y1, x2, y2 = scroll_gesture(width, height, action.direction)
            self._shell("input", "swipe", str(x1), str(y1), str(x2), str(y2), str(SCROLL_MS))
            return
        if resolved_rect is None:
            raise DeviceError(f"{action} needs a resolved element rectangle")
        x, y, w, h = resolved_rect
        cx, cy = x + w // 2, y + h // 2
        self._shell("input", "tap", str(cx), str(cy))
        if action.kind == "input":
            # Clear whatever the field held before typing the new value.
            self._shell("input", "keyevent", str(KEYCODE_MOVE_END))
            self._shell("input", "keyevent", *[str(KEYCODE_DEL)] * CLEAR_REPEATS)
            self._shell("input", "text", escape_input_text(action.value))
