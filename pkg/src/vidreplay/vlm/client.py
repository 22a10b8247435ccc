"""Prompt construction, response parsing, retrying invocation and usage accounting."""

from __future__ import annotations

import logging
import math
import re
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from ..actions import parse_action
from ..errors import InferenceError, InputError, InvocationError, ParseError, SelectionError

logger = logging.getLogger(__name__)

SCHEMAS = ("region_index", "yes_no", "action")
PHASES = ("roi_selection", "state_comparison", "action_inference", "region_detection")
COST_DECIMALS = 10  # reported totals; per-call costs use PriceTable.precision
MAX_OUTPUT_TOKENS = {"region_index": 16, "yes_no": 16, "action": 128}

REPLAY_GOAL = "Choose the single action on the current screen that reproduces the recorded action."
FINAL_GOAL = (
    "All recorded actions have been replayed. If the current screen shows the result of the last "
    "recorded action, answer [end]."
)


@lru_cache(maxsize=None)
def prompt_template(name: str) -> str:
    return resources.files("vidreplay.vlm").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


@dataclass(frozen=True)
class PriceTable:
    """Currency units per one million tokens."""

    input_per_million: float = 2.5
    output_per_million: float = 10.0
    precision: int = 10  # decimal places kept on each call's cost

    def cost(self, input_tokens: int, output_tokens: int) -> float:
        raw = input_tokens * self.input_per_million / 1e6 + output_tokens * self.output_per_million / 1e6
        return round(raw, self.precision)

    @classmethod
    def from_dict(cls, data: dict) -> "PriceTable":
        return cls(**{k: data[k] for k in ("input_per_million", "output_per_million", "precision") if k in data})


@dataclass(frozen=True)
class UsageRecord:
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0
    cost: float = 0.0
    phase: str = ""

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise InputError("token counts must be non-negative")

    def __add__(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
            latency=self.latency + other.latency,
            cost=self.cost + other.cost,
            phase=self.phase or other.phase,
        )

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency": self.latency,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "UsageRecord":
        return cls(
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
            latency=float(data.get("latency", 0.0)),
            cost=float(data.get("cost", 0.0)),
            phase=str(data.get("phase", "")),
        )


@dataclass(frozen=True, eq=False)
class VlmRequest:
    images: tuple[tuple[np.ndarray, str], ...]
    prompt_text: str
    max_output_tokens: int
    response_schema: str
    phase: str

    def __post_init__(self):
        if not self.images:
            raise InputError("a request needs at least one image")
        if self.response_schema not in SCHEMAS:
            raise InputError(f"unknown response schema {self.response_schema!r}")
        if self.max_output_tokens < 1:
            raise InputError("max_output_tokens must be positive")

    @property
    def rasters(self) -> list[np.ndarray]:
        return [img for img, _ in self.images]


@dataclass(frozen=True)
class VlmResponse:
    text: str
    parsed: Any
    confidence: float
    usage: UsageRecord
    attempts: int = 1


class VlmBackend(Protocol):
    def complete(
        self, images: Sequence[np.ndarray], text: str, max_tokens: int
    ) -> tuple[str, tuple[int, int], float | None]: ...


def _raster(image, what: str) -> np.ndarray:
    if image is None:
        raise InputError(f"{what} is missing")
    pixels = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise InputError(f"{what} must be an HxWx3 raster, got shape {pixels.shape}")
    return pixels


def build_roi_prompt(composite, region_count: int) -> VlmRequest:
    if region_count < 1:
        raise InputError("region_count must be at least 1")
    pixels = _raster(composite, "dual-view composite")
    listing = "\n".join(f"- Region {k}" for k in range(1, region_count + 1))
    text = prompt_template("roi_selection").format(region_list=listing)
    return VlmRequest(
        images=((pixels, "dual-view composite"),),
        prompt_text=text,
        max_output_tokens=MAX_OUTPUT_TOKENS["region_index"],
        response_schema="region_index",
        phase="roi_selection",
    )


def build_compare_prompt(roi_frame, current_screen, post_action_frame=None) -> VlmRequest:
    """Two images (ROI-emphasised recorded frame, current screen), or three with
    the recorded post-action frame placed between them."""
    images = [(_raster(roi_frame, "ROI frame"), "recorded screen with ROI")]
    note = ""
    if post_action_frame is not None:
        images.append((_raster(post_action_frame, "post-action frame"), "recorded screen after the action"))
        note = "Image 2 is the recorded screen after the action, for context.\n"
    images.append((_raster(current_screen, "current screen"), "current device screen"))
    text = prompt_template("state_comparison").format(post_action_note=note, current_index=len(images))
    return VlmRequest(
        images=tuple(images),
        prompt_text=text,
        max_output_tokens=MAX_OUTPUT_TOKENS["yes_no"],
        response_schema="yes_no",
        phase="state_comparison",
    )


def build_action_prompt(
    mode: str,
    images: Sequence,
    hinted_action: str | None = None,
    marks: Iterable[int] = (),
    final: bool = False,
) -> VlmRequest:
    """Consistent mode: [ROI first frame, last frame, current]; inconsistent: [first frame, current]."""
    marks_text = ", ".join(str(m) for m in marks) or "none"
    space = prompt_template("action_space").rstrip("\n")
    if mode == "consistent":
        if len(images) != 3:
            raise InputError(f"consistent mode needs 3 images, got {len(images)}")
        if not hinted_action:
            raise InputError("consistent mode needs a hinted action")
        captions = ("recorded screen before the action", "recorded screen after the action", "current screen")
        text = prompt_template("action_consistent").format(
            hinted_action=hinted_action,
            goal=FINAL_GOAL if final else REPLAY_GOAL,
            marks=marks_text,
            action_space=space,
        )
    elif mode == "inconsistent":
        if len(images) != 2:
            raise InputError(f"inconsistent mode needs 2 images, got {len(images)}")
        captions = ("recorded screen", "current screen")
        text = prompt_template("action_inconsistent").format(marks=marks_text, action_space=space)
    else:
        raise InputError(f"unknown action prompt mode {mode!r}")
    rasters = tuple((_raster(img, cap), cap) for img, cap in zip(images, captions))
    return VlmRequest(
        images=rasters,
        prompt_text=text,
        max_output_tokens=MAX_OUTPUT_TOKENS["action"],
        response_schema="action",
        phase="action_inference",
    )


_REGION = re.compile(r"region\s*#?\s*(\d+)", re.IGNORECASE)
_INTEGER = re.compile(r"(?<![\w.])(\d+)(?![\w.])")
_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_response(text: str, schema: str):
    text = text or ""
    if schema == "region_index":
        m = _REGION.search(text) or _INTEGER.search(text)
        if not m:
            raise ParseError(f"no region index in {text!r}")
        return int(m.group(1))
    if schema == "yes_no":
        m = _YES_NO.search(text)
        if not m:
            raise ParseError(f"no YES/NO in {text!r}")
        return m.group(1).lower() == "yes"
    if schema == "action":
        return parse_action(text)
    raise InputError(f"unknown response schema {schema!r}")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)

    def __post_init__(self):
        if self.max_attempts < 1:
            raise InputError("max_attempts must be at least 1")

    def delay(self, attempt: int) -> float:
        """Pause after failed attempt number ``attempt`` (1-based)."""
        if not self.backoff:
            return 0.0
        return float(self.backoff[min(attempt, len(self.backoff)) - 1])

    @classmethod
    def immediate(cls, max_attempts: int = 3) -> "RetryPolicy":
        return cls(max_attempts=max_attempts, backoff=(0.0,))


def _corrective(prompt: str, text: str, error: Exception) -> str:
    return (
        f"{prompt}\n\nYour previous answer was {text!r}, which could not be used: {error}. "
        "Answer again using exactly the requested format."
    )


def invoke(
    request: VlmRequest,
    backend: VlmBackend,
    retry: RetryPolicy = RetryPolicy(),
    prices: PriceTable = PriceTable(),
    validate: Callable[[Any], None] | None = None,
    clock: Callable[[], float] = time.perf_counter,
    sleep: Callable[[float], None] = time.sleep,
) -> VlmResponse:
    """Send ``request``, retrying on transport errors, parse errors and failed
    validation. Usage is summed over all attempts."""
    prompt = request.prompt_text
    usage = UsageRecord(phase=request.phase)
    attempts: list[dict] = []
    for attempt in range(1, retry.max_attempts + 1):
        started = clock()
        try:
            text, (n_in, n_out), prob = backend.complete(request.rasters, prompt, request.max_output_tokens)
        except Exception as exc:
            usage = usage + UsageRecord(latency=clock() - started)
            attempts.append({"text": "", "error": repr(exc)})
            logger.warning("VLM transport failure on attempt %d: %r", attempt, exc)
        else:
            usage = usage + UsageRecord(
                input_tokens=n_in, output_tokens=n_out, latency=clock() - started, cost=prices.cost(n_in, n_out)
            )
            try:
                parsed = parse_response(text, request.response_schema)
                if validate is not None:
                    validate(parsed)
            except (ParseError, InputError, InferenceError, SelectionError) as exc:
                attempts.append({"text": text, "error": str(exc), "kind": type(exc).__name__})
                prompt = _corrective(request.prompt_text, text, exc)
                logger.info("unusable VLM answer on attempt %d: %s", attempt, exc)
            else:
                confidence = 1.0 if prob is None else min(1.0, max(0.0, float(prob)))
                usage = UsageRecord(
                    usage.input_tokens, usage.output_tokens, usage.latency, round(usage.cost, prices.precision), usage.phase
                )
                return VlmResponse(text=text, parsed=parsed, confidence=confidence, usage=usage, attempts=attempt)
        if attempt < retry.max_attempts:
            sleep(retry.delay(attempt))
    error = InvocationError(f"no usable {request.response_schema} answer after {retry.max_attempts} attempts", attempts)
    error.usage = usage
    raise error


@dataclass
class VlmClient:
    """A backend plus retry, pricing and timing policy, with a usage ledger."""

    backend: VlmBackend
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    prices: PriceTable = field(default_factory=PriceTable)
    clock: Callable[[], float] = time.perf_counter
    sleep: Callable[[float], None] = time.sleep
    ledger: list[UsageRecord] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def invoke(self, request: VlmRequest, validate: Callable[[Any], None] | None = None) -> VlmResponse:
        try:
            response = invoke(request, self.backend, self.retry, self.prices, validate, self.clock, self.sleep)
        except InvocationError as exc:
            self.record(getattr(exc, "usage", UsageRecord(phase=request.phase)))
            raise
        self.record(response.usage)
        return response

    def record(self, usage: UsageRecord) -> None:
        with self._lock:
            self.ledger.append(usage)


def as_client(vlm) -> VlmClient:
    return vlm if isinstance(vlm, VlmClient) else VlmClient(backend=vlm)


@dataclass(frozen=True)
class PhaseStats:
    """Exact running totals (rationals), so merging reports is associative."""

    count: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    latency_sum: Fraction = Fraction(0)
    cost_sum: Fraction = Fraction(0)

    def add(self, record: UsageRecord) -> "PhaseStats":
        return PhaseStats(
            self.count + 1,
            self.input_tokens + record.input_tokens,
            self.output_tokens + record.output_tokens,
            self.latency_sum + Fraction(record.latency),
            self.cost_sum + Fraction(record.cost),
        )

    def merge(self, other: "PhaseStats") -> "PhaseStats":
        return PhaseStats(
            self.count + other.count,
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
            self.latency_sum + other.latency_sum,
            self.cost_sum + other.cost_sum,
        )

    def _mean(self, total) -> float:
        return float(Fraction(total) / self.count) if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "calls": self.count,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "latency": float(self.latency_sum),
            "cost": round(float(self.cost_sum), COST_DECIMALS),
            "mean_input_tokens": self._mean(self.input_tokens),
            "mean_output_tokens": self._mean(self.output_tokens),
            "mean_latency": self._mean(self.latency_sum),
            "mean_cost": round(self._mean(self.cost_sum), COST_DECIMALS),
        }


@dataclass(frozen=True)
class UsageReport:
    phases: dict[str, PhaseStats]

    def merge(self, other: "UsageReport") -> "UsageReport":
        names = list(self.phases) + [p for p in other.phases if p not in self.phases]
        return UsageReport(
            {n: self.phases.get(n, PhaseStats()).merge(other.phases.get(n, PhaseStats())) for n in names}
        )

    @property
    def total(self) -> PhaseStats:
        out = PhaseStats()
        for stats in self.phases.values():
            out = out.merge(stats)
        return out

    def to_dict(self) -> dict:
        data = {name: stats.to_dict() for name, stats in self.phases.items()}
        data["total"] = self.total.to_dict()
        return data


def account(records: Iterable[UsageRecord | dict]) -> UsageReport:
    """Per-phase totals and means. The four pipeline phases are always present."""
    phases = {p: PhaseStats() for p in PHASES}
    for rec in records:
        if isinstance(rec, dict):
            rec = UsageRecord.from_dict(rec)
        name = rec.phase or "other"
        phases[name] = phases.get(name, PhaseStats()).add(rec)
    return UsageReport(phases)


def format_report(report: UsageReport) -> str:
    """Plain-text table: one row per phase with mean latency, tokens and cost."""
    header = f"{'Phase':<18} {'Calls':>5} {'Latency (s)':>11} {'Tokens (in / out)':>22} {'Cost':>10}"
    lines = [header, "-" * len(header)]
    rows = list(report.phases.items()) + [("total", report.total)]
    for name, stats in rows:
        d = stats.to_dict()
        tokens = f"{d['mean_input_tokens']:.0f} / {d['mean_output_tokens']:.0f}"
        lines.append(f"{name:<18} {d['calls']:>5} {d['mean_latency']:>11.2f} {tokens:>22} {d['mean_cost']:>10.5f}")
    return "\n".join(lines)


def isclose_cost(a: float, b: float, precision: int = 10) -> bool:
    return math.isclose(a, b, abs_tol=10 ** (-precision))
