"""The capture/act contract shared by the simulator and the real-device bridge."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..actions import ReplayAction
from ..perception import Rect


@dataclass(frozen=True, eq=False)
class ScreenCapture:
    capture_id: str
    pixels: np.ndarray
    hierarchy: str
    taken_at: float
    screen_id: str = ""  # known only for simulated devices

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[0]


class DeviceAdapter(Protocol):
    def capture(self) -> ScreenCapture: ...

    def act(self, action: ReplayAction, resolved_rect: Rect | None) -> None: ...


def capture(device: DeviceAdapter) -> ScreenCapture:
    return device.capture()


def act(device: DeviceAdapter, action: ReplayAction, resolved_rect: Rect | None = None) -> None:
    device.act(action, resolved_rect)


def scroll_gesture(width: int, height: int, direction: str) -> tuple[int, int, int, int]:
    """Drag across the middle 60% of the screen height.

    Scrolling down moves content up, so the finger travels from the lower
    point to the upper one.
    """
    x = width // 2
    low, high = int(round(height * 0.8)), int(round(height * 0.2))
    if direction == "down":
        return x, low, x, high
    return x, high, x, low
