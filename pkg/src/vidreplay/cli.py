"""Command-line entry points: segment, compare, replay, eval, report.

Exit codes: 0 success, 2 usage or input error, 3 replay budget exhausted,
4 backend failure. The only secret, a VLM API key, comes from the
environment (``VIDREPLAY_API_KEY`` unless the config names another).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import cv2

from .comparison import compare_state, select_roi
from .config import RunConfig, load_config
from .device import AdbDevice, SimDevice, load_sim_app
from .errors import BackendError, DeviceError, InputError, InvocationError, ReplayError
from .eval import evaluate_directories, format_table
from .perception import HttpDetector, ScriptedDetector
from .recording import StubEmbeddingBackend, load_recording, prepare_recording
from .replay import Backends, reproduce
from .segmentation import PaddleOcrBackend, ScriptedOcrBackend, segment, write_series_csv
from .vlm import HttpChatBackend, ScriptedVlmBackend, UsageRecord, VlmClient, account, format_report

logger = logging.getLogger("vidreplay")

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_BACKEND = 0, 2, 3, 4
STATUS_EXIT = {"reproduced": EXIT_OK, "budget_exhausted": EXIT_BUDGET, "error": EXIT_BACKEND}


def _zero() -> float:
    return 0.0


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise InputError(f"{path} not found") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")


def make_embedding(cfg: RunConfig):
    if cfg.embedding["kind"] == "clip":  # pragma: no cover - needs model weights
        from .recording import ClipEmbeddingBackend

        return ClipEmbeddingBackend(cfg.embedding.get("model", "openai/clip-vit-base-patch32"))
    return StubEmbeddingBackend(seed=str(cfg.embedding.get("seed", "0")))


def make_ocr(cfg: RunConfig):
    kind = cfg.ocr["kind"]
    if kind == "scripted":
        return ScriptedOcrBackend.from_json(_read_json(cfg.resolve(cfg.ocr["script"])))
    if kind == "paddle":  # pragma: no cover - optional dependency
        return PaddleOcrBackend(cfg.ocr.get("lang", "en"))
    return None


def make_detector(cfg: RunConfig):
    if cfg.detector["kind"] == "http":  # pragma: no cover - needs a service
        return HttpDetector(cfg.detector["endpoint"])
    return ScriptedDetector.from_json(_read_json(cfg.resolve(cfg.detector["script"])))


def make_vlm(cfg: RunConfig, deterministic: bool) -> VlmClient:
    if cfg.vlm["kind"] == "http":
        backend = HttpChatBackend(
            cfg.vlm["endpoint"], cfg.vlm["model"], api_key_env=cfg.vlm.get("api_key_env", "VIDREPLAY_API_KEY")
        )
    else:
        backend = ScriptedVlmBackend.from_file(cfg.resolve(cfg.vlm["script"]))
    clock = _zero if deterministic else time.perf_counter
    return VlmClient(backend=backend, retry=cfg.retry, prices=cfg.prices, clock=clock)


def make_device(cfg: RunConfig, deterministic: bool):
    clock = _zero if deterministic else time.time
    if cfg.device["kind"] == "adb":  # pragma: no cover - needs a device
        return AdbDevice(serial=cfg.device.get("serial"), binary=cfg.device.get("binary", "adb"), clock=clock)
    app = cfg.device.get("app")
    if not app:
        raise InputError("device: simulator needs an 'app' definition path")
    return SimDevice(load_sim_app(cfg.resolve(app)), clock=clock)


def _prepared(args, cfg: RunConfig):
    fps = args.fps if getattr(args, "fps", None) else cfg.sample_fps
    recording = load_recording(args.video, sample_fps=fps)
    return prepare_recording(recording, make_embedding(cfg))


def cmd_segment(args, cfg: RunConfig, out: Path) -> int:
    seg = segment(_prepared(args, cfg), make_ocr(cfg), cfg.segmentation)
    _write_json(out / "scenes.json", {"boundaries": seg.boundaries, **seg.scenes_json()})
    write_series_csv(seg.series, out / "similarity.csv")
    if args.keyframes:
        frames_dir = out / "keyframes"
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i, scene in enumerate(seg.scenes):
            for tag, frame in (("first", scene.first_frame), ("last", scene.last_frame)):
                cv2.imwrite(str(frames_dir / f"scene{i:03d}_{tag}.png"), cv2.cvtColor(frame.pixels, cv2.COLOR_RGB2BGR))
    print(f"{len(seg.scenes)} scenes -> {out / 'scenes.json'}")
    return EXIT_OK


def cmd_compare(args, cfg: RunConfig, out: Path) -> int:
    seg = segment(_prepared(args, cfg), make_ocr(cfg), cfg.segmentation)
    if not 0 <= args.scene < len(seg.scenes):
        raise InputError(f"scene {args.scene} out of range; the recording has {len(seg.scenes)} scenes")
    bgr = cv2.imread(str(args.screen), cv2.IMREAD_COLOR)
    if bgr is None:
        raise InputError(f"cannot read screen image {args.screen}")
    screen = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    client = make_vlm(cfg, args.deterministic)
    scene = seg.scenes[args.scene]
    roi = select_roi(scene, make_detector(cfg), client)
    verdict = compare_state(scene, roi, screen, client, Path(args.screen).name, cfg.include_post_action)
    _write_json(
        out / "compare.json",
        {
            "scene": args.scene,
            "roi": roi.to_dict(),
            "verdict": verdict.to_dict(),
            "usage_log": [u.to_dict() for u in client.ledger],
        },
    )
    print("consistent" if verdict.consistent else "inconsistent")
    return EXIT_OK


def cmd_replay(args, cfg: RunConfig, out: Path) -> int:
    backends = Backends(
        embedding=make_embedding(cfg),
        ocr=make_ocr(cfg),
        detector=make_detector(cfg),
        vlm=make_vlm(cfg, args.deterministic),
        include_post_action=cfg.include_post_action,
    )
    device = make_device(cfg, args.deterministic)
    fps = args.fps if args.fps else cfg.sample_fps
    recording = load_recording(args.video, sample_fps=fps)
    clock = _zero if args.deterministic else time.perf_counter
    trace = reproduce(recording, device, backends, cfg.budget, cfg.segmentation, clock=clock)
    path = out / "trace.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trace.to_json(), encoding="utf-8")
    print(f"{trace.status}: {len(trace.steps)} steps ({trace.explore_steps} exploratory) -> {path}")
    if trace.error:
        print(trace.error, file=sys.stderr)
    return STATUS_EXIT[trace.status]


def cmd_eval(args, cfg: RunConfig, out: Path) -> int:
    report = evaluate_directories(args.predictions, args.truth, args.tolerance)
    _write_json(out / "eval.json", report.to_dict())
    if args.table:
        print(format_table(report), end="")
    else:
        print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, out: Path) -> int:
    if not args.traces:
        raise InputError("report needs at least one trace file")
    records: list[UsageRecord] = []
    for path in args.traces:
        trace = _read_json(Path(path))
        if "usage_log" not in trace:
            raise InputError(f"{path} has no usage_log")
        records.extend(UsageRecord.from_dict(u) for u in trace["usage_log"])
    report = account(records)
    _write_json(out / "report.json", report.to_dict())
    print(format_report(report))
    return EXIT_OK


COMMANDS = {
    "segment": cmd_segment,
    "compare": cmd_compare,
    "replay": cmd_replay,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML run configuration")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--deterministic", action="store_true", help="zero all timestamps and latencies")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="vidreplay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", parents=[common], help="split a recording into action scenes")
    p.add_argument("video")
    p.add_argument("--fps", type=float, help="resample the recording to this rate first")
    p.add_argument("--keyframes", action="store_true", help="write each scene's first and last frame as PNG")

    p = sub.add_parser("compare", parents=[common], help="check one scene against a device screenshot")
    p.add_argument("video")
    p.add_argument("--screen", required=True, help="PNG of the current device screen")
    p.add_argument("--scene", type=int, default=0)
    p.add_argument("--fps", type=float)

    p = sub.add_parser("replay", parents=[common], help="replay a recording on the configured device")
    p.add_argument("video")
    p.add_argument("--fps", type=float)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("truth")
    p.add_argument("--tolerance", type=int, default=5)
    p.add_argument("--table", action="store_true", help="print plain-text tables")

    p = sub.add_parser("report", parents=[common], help="per-phase VLM cost and latency")
    p.add_argument("traces", nargs="*")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.output_dir)
        return COMMANDS[args.command](args, cfg, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BackendError, InvocationError, DeviceError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ReplayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
