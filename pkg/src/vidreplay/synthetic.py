"""Synthetic GUI recordings with planted, labelled actions.

Screens are procedurally drawn phone-like layouts (status bar, header,
list rows made of text-like bars). Each generated recording comes with the
ground-truth boundaries, scene labels and an OCR fixture that reports a
virtual keyboard on exactly the frames where one is drawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recording import Recording, from_arrays
from .segmentation import OcrResult, ScriptedOcrBackend, pixel_digest

WIDTH = 180
HEIGHT = 320
KEYBOARD_HEIGHT = 150
BACKGROUND = 236
# Upper jitter bound (0..255 scale). At 24 the worst stable-pair similarity
# loss measured about 0.04, under the 0.05 budget; 36 overshot to 0.08.
MAX_NOISE = 24.0
SCREEN_WORDS = ("Settings", "Inbox", "Profile", "Search", "Library", "Home", "Cart", "Notes", "42", "2048")
KEYBOARD_ROWS = ("QWERTYUIOP", "ASDFGHJKL", "ZXCVBNM")


@dataclass
class PlantedAction:
    kind: str
    boundary: int  # series index: last frame before the screen starts changing
    end: int  # first frame of the settled post-action state

    def to_dict(self) -> dict:
        return {"start": self.boundary, "end": self.end, "type": self.kind}


@dataclass
class SyntheticRecording:
    recording: Recording
    actions: list[PlantedAction]
    ocr: ScriptedOcrBackend
    noise: float
    seed: int

    @property
    def boundaries(self) -> list[int]:
        return [a.boundary for a in self.actions]

    def truth_json(self) -> dict:
        return {"boundaries": self.boundaries, "scenes": [a.to_dict() for a in self.actions]}


def render_page(rng: np.random.Generator, height: int, width: int = WIDTH) -> np.ndarray:
    """Grayscale page of list rows; taller than the screen when used for scrolling."""
    page = np.full((height, width), BACKGROUND, dtype=np.float64)
    y = 0
    while y < height:
        row_h = int(rng.integers(20, 90))
        shade = float(rng.choice([BACKGROUND, 250, 215, 200]))
        page[y : y + row_h, :] = shade
        x = 8
        if rng.random() < 0.5:
            icon = int(rng.integers(12, row_h - 4)) if row_h > 16 else 8
            page[y + 3 : y + 3 + icon, x : x + icon] = float(rng.integers(40, 160))
            x += icon + 6
        for line in range(int(rng.integers(1, 5))):
            top = y + int(rng.integers(3, 8)) + line * int(rng.integers(10, 16))
            if top + 6 > y + row_h:
                break
            length = int(rng.integers(30, width - x - 6)) if width - x - 6 > 30 else 10
            page[top : top + 6, x : x + length] = float(rng.integers(20, 110))
        page[min(height - 1, y + row_h - 1), :] = 180.0
        y += row_h
    return page


@dataclass
class Screen:
    """A screen: fixed chrome plus a scrollable page and an optional text field."""

    chrome: np.ndarray
    page: np.ndarray
    tint: np.ndarray
    offset: int = 0
    typed: int = 0
    keyboard: float = 0.0  # 0 hidden .. 1 fully shown
    pressed: int = -1

    header_h: int = 44

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Screen":
        chrome = np.full((cls.header_h, WIDTH), float(rng.integers(60, 200)))
        chrome[:12, :] = 30.0
        chrome[20:32, 10 : 10 + int(rng.integers(40, 120))] = 250.0
        page = render_page(rng, HEIGHT * 3)
        tint = rng.uniform(0.85, 1.15, size=3)
        return cls(chrome=chrome, page=page, tint=tint)

    @property
    def max_offset(self) -> int:
        return self.page.shape[0] - (HEIGHT - self.header_h)

    def render(self) -> np.ndarray:
        view_h = HEIGHT - self.header_h
        body = self.page[self.offset : self.offset + view_h].copy()
        if self.typed or self.keyboard > 0:
            # Focused text field at the top of the body.
            body[8:34, 8 : WIDTH - 8] = 255.0
            body[8:10, 8 : WIDTH - 8] = 60.0
            body[32:34, 8 : WIDTH - 8] = 60.0
            for c in range(self.typed):
                x = 14 + 9 * c
                if x + 6 < WIDTH - 10:
                    body[15:27, x : x + 6] = 25.0
        gray = np.vstack([self.chrome, body])
        if self.keyboard > 0:
            shown = int(round(KEYBOARD_HEIGHT * self.keyboard))
            kb = _keyboard_raster(self.pressed)[:shown]
            gray[HEIGHT - shown :, :] = kb
        rgb = np.clip(gray[:, :, None] * self.tint[None, None, :], 0, 255)
        return rgb

    def keyboard_rows_visible(self) -> list[str]:
        shown = int(round(KEYBOARD_HEIGHT * self.keyboard))
        rows = []
        for r, text in enumerate(KEYBOARD_ROWS):
            if shown >= KEYBOARD_HEIGHT - (8 + r * 30):
                rows.append(text)
        return rows


def _keyboard_raster(pressed: int = -1) -> np.ndarray:
    kb = np.full((KEYBOARD_HEIGHT, WIDTH), 70.0)
    key_w = (WIDTH - 4) // 10
    n = 0
    for r, keys in enumerate((10, 9, 7)):
        top = 8 + r * 30
        indent = 2 + (10 - keys) * key_w // 2
        for k in range(keys):
            left = indent + k * key_w
            kb[top : top + 24, left + 1 : left + key_w - 1] = 255.0 if n == pressed else 190.0
            kb[top + 9 : top + 15, left + key_w // 2 - 2 : left + key_w // 2 + 2] = 40.0
            n += 1
    kb[100:122, 40 : WIDTH - 40] = 190.0
    return kb


def _jitter(rgb: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float32)
    if noise > 0:
        rgb = rgb + rng.standard_normal(size=rgb.shape, dtype=np.float32) * np.float32(noise)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


@dataclass
class _Builder:
    rng: np.random.Generator
    noise: float
    frames: list[np.ndarray] = field(default_factory=list)
    keyboard_rows: list[list[str]] = field(default_factory=list)

    def emit(self, screen: Screen, clean: np.ndarray | None = None) -> None:
        rgb = screen.render() if clean is None else clean
        self.frames.append(_jitter(rgb, self.rng, self.noise))
        self.keyboard_rows.append(screen.keyboard_rows_visible() if clean is None else [])

    def hold(self, screen: Screen, n: int) -> None:
        rgb = screen.render()
        rows = screen.keyboard_rows_visible()
        for _ in range(n):
            self.frames.append(_jitter(rgb, self.rng, self.noise))
            self.keyboard_rows.append(rows)


def _choose_kinds(rng: np.random.Generator, n: int) -> list[str]:
    kinds: list[str] = []
    for _ in range(n):
        if kinds and kinds[-1] == "input":
            kinds.append("tap")
            continue
        kinds.append(str(rng.choice(["tap", "scroll", "input"], p=[0.45, 0.3, 0.25])))
    return kinds


def generate_recording(
    seed: int,
    n_actions: int | None = None,
    noise: float | None = None,
    kinds: list[str] | None = None,
    fps: float = 10.0,
) -> SyntheticRecording:
    """Generate one labelled recording.

    ``noise`` is the standard deviation (0..255 scale) of the per-pixel
    Gaussian jitter applied independently to every frame.
    """
    rng = np.random.default_rng(seed)
    if n_actions is None:
        n_actions = int(rng.integers(5, 16))
    if noise is None:
        noise = float(rng.uniform(0.0, MAX_NOISE))
    kinds = kinds or _choose_kinds(rng, n_actions)

    b = _Builder(rng=rng, noise=noise)
    screen = Screen.random(rng)
    b.hold(screen, int(rng.integers(6, 12)))
    actions: list[PlantedAction] = []

    for kind in kinds:
        boundary = len(b.frames) - 1
        if kind == "tap":
            nxt = Screen.random(rng)
            before, after = screen.render(), nxt.render()
            if rng.random() < 0.5:
                # Touch feedback: the tapped row flashes before the cut.
                flash = before.copy()
                top = int(rng.integers(screen.header_h, HEIGHT - 40))
                flash[top : top + 36] = np.minimum(flash[top : top + 36] + 40, 255)
                b.emit(screen, clean=flash)
            if rng.random() < 0.5:
                # One frame of the new screen sliding in from the right.
                cover = int(WIDTH * rng.uniform(0.55, 0.8))
                slide = before.copy()
                slide[:, WIDTH - cover :] = after[:, :cover]
                b.emit(screen, clean=slide)
            screen = nxt
            end = len(b.frames)
            b.hold(screen, int(rng.integers(8, 15)))
        elif kind == "scroll":
            direction = 1 if screen.offset + 200 < screen.max_offset else -1
            velocity = float(rng.uniform(24, 40))
            while velocity >= 1.5:
                step = int(round(velocity)) * direction
                screen.offset = int(np.clip(screen.offset + step, 0, screen.max_offset))
                b.emit(screen)
                velocity *= 0.7
            end = len(b.frames) - 1
            b.hold(screen, int(rng.integers(8, 15)))
        elif kind == "input":
            screen.keyboard = 1.0
            b.emit(screen)
            end = len(b.frames) - 1
            for _ in range(int(rng.integers(3, 9))):
                screen.pressed = int(rng.integers(0, 26))
                screen.typed += 1
                b.emit(screen)
                screen.pressed = -1
                b.hold(screen, int(rng.integers(1, 3)))
            b.hold(screen, int(rng.integers(6, 12)))
        else:
            raise ValueError(f"unknown action kind {kind!r}")
        actions.append(PlantedAction(kind=kind, boundary=boundary, end=end))

    recording = from_arrays(b.frames, fps=fps, source_path=f"synthetic:{seed}")
    ocr = ScriptedOcrBackend()
    for raster, rows in zip(b.frames, b.keyboard_rows):
        if rows:
            tokens = [(text, (4, HEIGHT - KEYBOARD_HEIGHT + 8 + 30 * i, WIDTH - 8, 24)) for i, text in enumerate(rows)]
        else:
            word = SCREEN_WORDS[int(rng.integers(0, len(SCREEN_WORDS)))]
            tokens = [(word, (10, 20, 60, 12))]
        ocr.results[pixel_digest(raster)] = OcrResult.from_tokens(tokens)
    return SyntheticRecording(recording=recording, actions=actions, ocr=ocr, noise=noise, seed=seed)


def two_screen_recording(n_each: int = 10, seed: int = 0) -> Recording:
    """``n_each`` copies of screen A followed by ``n_each`` copies of screen B."""
    rng = np.random.default_rng(seed)
    a, bscreen = Screen.random(rng), Screen.random(rng)
    frames = [_jitter(a.render(), rng, 0)] * n_each + [_jitter(bscreen.render(), rng, 0)] * n_each
    return from_arrays(frames, fps=10.0, source_path="synthetic:two-screen")


def screens_recording(pattern: str, seed: int = 0) -> Recording:
    """One frame per character of ``pattern``; equal letters draw equal screens."""
    rng = np.random.default_rng(seed)
    screens: dict[str, np.ndarray] = {}
    frames = []
    for ch in pattern:
        if ch not in screens:
            screens[ch] = _jitter(Screen.random(rng).render(), rng, 0)
        frames.append(screens[ch])
    return from_arrays(frames, fps=10.0, source_path=f"synthetic:{pattern}")


def record_sim_session(
    app, actions, hold: int = 6, seed: int = 0, noise: float = 0.0, start: str | None = None
) -> Recording:
    """Screen-record a user session on a simulated app.

    ``actions`` are ReplayActions; tap and input targets are element ids on
    the screen they are performed on. Each screen is held for ``hold`` frames.
    The session begins on ``start`` (default: the app's initial screen).
    """
    from .device.sim import SimDevice

    rng = np.random.default_rng(seed)
    device = SimDevice(app, clock=lambda: 0.0, current=start or "")
    frames: list[np.ndarray] = []

    def film() -> None:
        pixels = device.capture().pixels
        frames.extend(_jitter(pixels, rng, noise) for _ in range(hold))

    film()
    for action in actions:
        rect = None
        if action.kind in ("tap", "input") and isinstance(action.target, int):
            element = device.screen.element(action.target)
            if element is None:
                raise ValueError(f"screen {device.current!r} has no element {action.target}")
            rect = element.rect
        device.act(action, rect)
        film()
    return from_arrays(frames, fps=10.0, source_path="synthetic:sim-session")
