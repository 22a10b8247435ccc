"""Structured replay actions and their bracketed text form.

Canonical forms::

    [tap] [5]        [tap] [back]
    [scroll] [up]    [scroll] [down]
    [input] [3] [hello world]
    [end]
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .errors import InputError, ParseError

ACTION_KINDS = ("tap", "scroll", "input", "end")
DIRECTIONS = ("up", "down")
BACK = "back"

Target = Union[int, str, None]

_FIELD = r"\[[^\[\]\r\n]*\]"
_SEQUENCE = re.compile(rf"{_FIELD}(?:[ \t]*{_FIELD})*")
_FIELD_BODY = re.compile(r"\[([^\[\]\r\n]*)\]")
_MARK = re.compile(r"[0-9]+")


@dataclass(frozen=True)
class ReplayAction:
    kind: str
    target: Target = None
    direction: str | None = None
    value: str | None = None

    def __post_init__(self):
        problem = _violation(self)
        if problem:
            raise InputError(f"invalid {self.kind!r} action: {problem}")

    @classmethod
    def tap(cls, target: int | str) -> "ReplayAction":
        return cls("tap", target=target)

    @classmethod
    def scroll(cls, direction: str) -> "ReplayAction":
        return cls("scroll", direction=direction)

    @classmethod
    def input(cls, target: int, value: str) -> "ReplayAction":
        return cls("input", target=target, value=value)

    @classmethod
    def end(cls) -> "ReplayAction":
        return cls("end")

    @property
    def mark_id(self) -> int | None:
        return self.target if isinstance(self.target, int) else None

    def __str__(self) -> str:
        return render_action(self)


def _is_mark(target) -> bool:
    return isinstance(target, int) and not isinstance(target, bool) and target >= 1


def _violation(a: ReplayAction) -> str | None:
    if a.kind not in ACTION_KINDS:
        return "unknown kind"
    if a.kind == "tap":
        if not (_is_mark(a.target) or a.target == BACK):
            return "target must be a positive mark id or 'back'"
        if a.direction is not None or a.value is not None:
            return "tap takes only a target"
    elif a.kind == "scroll":
        if a.direction not in DIRECTIONS:
            return "direction must be up or down"
        if a.target is not None or a.value is not None:
            return "scroll takes only a direction"
    elif a.kind == "input":
        if not _is_mark(a.target):
            return "target must be a positive mark id"
        if not isinstance(a.value, str) or not a.value:
            return "value must be a non-empty string"
        if re.search(r"[\[\]\r\n]", a.value):
            return "value may not contain brackets or line breaks"
        if a.direction is not None:
            return "input takes no direction"
    elif a.target is not None or a.direction is not None or a.value is not None:
        return "end takes no fields"
    return None


def render_action(action: ReplayAction) -> str:
    problem = _violation(action)
    if problem:
        raise InputError(f"invalid {action.kind!r} action: {problem}")
    if action.kind == "tap":
        return f"[tap] [{action.target}]"
    if action.kind == "scroll":
        return f"[scroll] [{action.direction}]"
    if action.kind == "input":
        return f"[input] [{action.target}] [{action.value}]"
    return "[end]"


def _from_fields(fields: list[str]) -> ReplayAction | None:
    head = fields[0].strip().lower()
    rest = fields[1:]
    if head == "end" and not rest:
        return ReplayAction.end()
    if head == "tap" and len(rest) == 1:
        target = rest[0].strip()
        if target.lower() == BACK:
            return ReplayAction.tap(BACK)
        if _MARK.fullmatch(target) and int(target) >= 1:
            return ReplayAction.tap(int(target))
        return None
    if head == "scroll" and len(rest) == 1:
        direction = rest[0].strip().lower()
        return ReplayAction.scroll(direction) if direction in DIRECTIONS else None
    if head == "input" and len(rest) == 2:
        target = rest[0].strip()
        if _MARK.fullmatch(target) and int(target) >= 1 and rest[1]:
            return ReplayAction.input(int(target), rest[1])
    return None


def parse_action(text: str) -> ReplayAction:
    """Read the first legal bracketed-field sequence in ``text``.

    Surrounding prose is ignored. A sequence is a run of ``[...]`` fields
    separated only by spaces or tabs; it must match one action form exactly.
    """
    for match in _SEQUENCE.finditer(text or ""):
        fields = _FIELD_BODY.findall(match.group(0))
        action = _from_fields(fields)
        if action is not None:
            return action
    raise ParseError(f"no legal action in {text!r}")
