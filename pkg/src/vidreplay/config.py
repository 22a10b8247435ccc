"""Run configuration: one JSON or TOML document, with paths relative to it."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InputError
from .replay import ReplayBudget
from .segmentation import SegmentationParams
from .vlm import PriceTable, RetryPolicy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

API_KEY_ENV = "VIDREPLAY_API_KEY"


@dataclass
class RunConfig:
    vlm: dict = field(default_factory=lambda: {"kind": "scripted"})
    ocr: dict = field(default_factory=lambda: {"kind": "none"})
    detector: dict = field(default_factory=lambda: {"kind": "scripted"})
    embedding: dict = field(default_factory=lambda: {"kind": "stub"})
    device: dict = field(default_factory=lambda: {"kind": "sim"})
    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    budget: ReplayBudget = field(default_factory=ReplayBudget)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    prices: PriceTable = field(default_factory=PriceTable)
    include_post_action: bool = True
    sample_fps: float | None = None
    output_dir: str = "out"
    base_dir: str = "."

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | os.PathLike = ".") -> "RunConfig":
        known = {
            "vlm", "ocr", "detector", "embedding", "device", "segmentation", "budget",
            "retry", "prices", "include_post_action", "sample_fps", "output_dir",
        }
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(base_dir=str(base_dir))
        for key in ("vlm", "ocr", "detector", "embedding", "device"):
            if key in data:
                section = data[key]
                if not isinstance(section, dict) or "kind" not in section:
                    raise InputError(f"config section {key!r} needs a 'kind'")
                setattr(cfg, key, dict(section))
        if "segmentation" in data:
            cfg.segmentation = SegmentationParams.from_dict(data["segmentation"])
        if "budget" in data:
            cfg.budget = ReplayBudget.from_dict(data["budget"])
        if "retry" in data:
            r = data["retry"]
            cfg.retry = RetryPolicy(
                max_attempts=int(r.get("max_attempts", 3)),
                backoff=tuple(float(b) for b in r.get("backoff", (1.0, 2.0, 4.0))),
            )
        if "prices" in data:
            cfg.prices = PriceTable.from_dict(data["prices"])
        cfg.include_post_action = bool(data.get("include_post_action", True))
        if data.get("sample_fps") is not None:
            cfg.sample_fps = float(data["sample_fps"])
        cfg.output_dir = str(data.get("output_dir", cfg.output_dir))
        cfg.validate()
        return cfg

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        """Scripted backends need script files; real ones need endpoints."""
        for name in ("vlm", "detector", "ocr"):
            section = getattr(self, name)
            kind = section["kind"]
            if kind == "scripted" and not section.get("script"):
                raise InputError(f"{name}: scripted backend needs a 'script' path")
            if kind == "http" and not section.get("endpoint"):
                raise InputError(f"{name}: http backend needs an 'endpoint'")
        if self.vlm["kind"] == "http" and not self.vlm.get("model"):
            raise InputError("vlm: http backend needs a 'model'")
        kinds = {"vlm": ("scripted", "http"), "detector": ("scripted", "http"), "ocr": ("scripted", "paddle", "none"),
                 "embedding": ("stub", "clip"), "device": ("sim", "adb")}
        for name, allowed in kinds.items():
            kind = getattr(self, name)["kind"]
            if kind not in allowed:
                raise InputError(f"{name}: kind {kind!r} is not one of {allowed}")


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file {path} not found")
    text = path.read_text(encoding="utf-8")
    try:
        data: Any = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"config file {path} is malformed: {exc}") from exc
    return RunConfig.from_dict(data, base_dir=path.parent)
