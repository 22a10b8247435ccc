"""Metrics: boundary and scene matching, action-type accuracy, comparison
precision/recall/F1 and reproducibility.

Empty-set conventions (never hit by real data, stated so results are total):

* nothing predicted and nothing true: precision = recall = F1 = 1;
* nothing predicted, something true: precision = 1, recall = 0, F1 = 0;
* something predicted, nothing true: precision = 0, recall = 1, F1 = 0.

Reference values reported for the original system, for orientation only:
boundary P/R/F1 0.87/0.85/0.86; action accuracy tap 0.88, scroll 0.93,
input 1.00; comparison P/R/F1 0.86/0.88/0.87; reproducibility 72.0% at a
mean of 302.6 s per recording.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError
from .segmentation import ACTION_TYPES

DEFAULT_TOLERANCE = 5


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def _ratio(num: int, den: int) -> float:
    return num / den if den else 1.0


@dataclass(frozen=True)
class BoundaryEval:
    tolerance: int
    matches: tuple[tuple[int, int], ...]
    n_predicted: int
    n_truth: int

    @property
    def precision(self) -> float:
        if self.n_predicted == 0:
            return 1.0
        return len(self.matches) / self.n_predicted

    @property
    def recall(self) -> float:
        if self.n_truth == 0:
            return 1.0
        return len(self.matches) / self.n_truth

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "matches": [list(m) for m in self.matches],
            "predicted": self.n_predicted,
            "truth": self.n_truth,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def _check_sorted(values: Sequence[int], name: str) -> list[int]:
    values = [int(v) for v in values]
    if any(b < a for a, b in zip(values, values[1:])):
        raise InputError(f"{name} boundaries must be sorted")
    return values


def _greedy(pairs: list[tuple[float, int, int]]) -> list[tuple[int, int]]:
    """Take pairs closest-first, skipping any whose endpoints are already used."""
    used_p, used_t, out = set(), set(), []
    for _, i, j in sorted(pairs):
        if i not in used_p and j not in used_t:
            used_p.add(i)
            used_t.add(j)
            out.append((i, j))
    return sorted(out)


def match_boundaries(
    predicted: Sequence[int], truth: Sequence[int], tolerance: int = DEFAULT_TOLERANCE
) -> BoundaryEval:
    """Greedy nearest-first one-to-one matching within ``tolerance`` frames."""
    p = _check_sorted(predicted, "predicted")
    t = _check_sorted(truth, "truth")
    pairs = [(abs(a - b), i, j) for i, a in enumerate(p) for j, b in enumerate(t) if abs(a - b) <= tolerance]
    matches = tuple((p[i], t[j]) for i, j in _greedy(pairs))
    return BoundaryEval(tolerance=tolerance, matches=matches, n_predicted=len(p), n_truth=len(t))


def _scene_fields(scene) -> tuple[int, int, str]:
    if isinstance(scene, dict):
        return int(scene["start"]), int(scene["end"]), str(scene["type"])
    return int(scene.start_frame), int(scene.end_frame), str(scene.action_type)


def match_scenes(predicted: Sequence, truth: Sequence, tolerance: int = DEFAULT_TOLERANCE) -> list[tuple[int, int]]:
    """Index pairs (predicted, truth) of scenes whose start and end both agree
    within ``tolerance``; greedy on the summed endpoint distance."""
    ps = [_scene_fields(s) for s in predicted]
    ts = [_scene_fields(s) for s in truth]
    pairs = []
    for i, (ps_, pe, _) in enumerate(ps):
        for j, (ts_, te, _) in enumerate(ts):
            if abs(ps_ - ts_) <= tolerance and abs(pe - te) <= tolerance:
                pairs.append((abs(ps_ - ts_) + abs(pe - te), i, j))
    return _greedy(pairs)


def scene_eval(predicted: Sequence, truth: Sequence, tolerance: int = DEFAULT_TOLERANCE) -> BoundaryEval:
    """Scene-level precision/recall: a predicted scene counts when both of its
    endpoints match a true scene."""
    pairs = match_scenes(predicted, truth, tolerance)
    return BoundaryEval(tolerance, tuple(pairs), len(predicted), len(truth))


@dataclass(frozen=True)
class AccuracyEval:
    correct: dict[str, int]
    total: dict[str, int]

    @property
    def accuracy(self) -> dict[str, float]:
        return {t: self.correct.get(t, 0) / n for t, n in self.total.items() if n}

    def merge(self, other: "AccuracyEval") -> "AccuracyEval":
        keys = set(self.total) | set(other.total)
        return AccuracyEval(
            {k: self.correct.get(k, 0) + other.correct.get(k, 0) for k in keys},
            {k: self.total.get(k, 0) + other.total.get(k, 0) for k in keys},
        )


def action_counts(predicted: Sequence, truth: Sequence, tolerance: int = DEFAULT_TOLERANCE) -> AccuracyEval:
    ps = [_scene_fields(s) for s in predicted]
    ts = [_scene_fields(s) for s in truth]
    total = {t: 0 for t in ACTION_TYPES}
    correct = {t: 0 for t in ACTION_TYPES}
    for _, _, kind in ts:
        total[kind] = total.get(kind, 0) + 1
    for i, j in match_scenes(predicted, truth, tolerance):
        if ps[i][2] == ts[j][2]:
            correct[ts[j][2]] = correct.get(ts[j][2], 0) + 1
    return AccuracyEval(correct, total)


def action_accuracy(predicted: Sequence, truth: Sequence, tolerance: int = DEFAULT_TOLERANCE) -> dict[str, float]:
    """Per type: correctly labelled matched scenes / true scenes of that type.
    Types absent from the truth are left out."""
    return action_counts(predicted, truth, tolerance).accuracy


@dataclass(frozen=True)
class LabelEval:
    tp: int
    fp: int
    fn: int
    tn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def comparison_eval(verdicts: Sequence, truth: Sequence[bool], positive: bool = True) -> LabelEval:
    """P/R/F1 with ``positive`` (by default "consistent") as the positive class."""
    if len(verdicts) != len(truth):
        raise InputError(f"{len(verdicts)} verdicts but {len(truth)} truth labels")
    preds = [bool(v.consistent if hasattr(v, "consistent") else v) for v in verdicts]
    tp = fp = fn = tn = 0
    for p, t in zip(preds, (bool(x) for x in truth)):
        if p == positive and t == positive:
            tp += 1
        elif p == positive:
            fp += 1
        elif t == positive:
            fn += 1
        else:
            tn += 1
    return LabelEval(tp, fp, fn, tn)


@dataclass(frozen=True)
class ReproducibilityEval:
    reproduced: int
    total: int
    mean_wall_time: float

    @property
    def rate(self) -> float:
        return self.reproduced / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {"reproduced": self.reproduced, "total": self.total, "rate": self.rate, "mean_wall_time": self.mean_wall_time}


def reproducibility(traces: Sequence, bug_reached: Sequence[bool]) -> ReproducibilityEval:
    """Share of traces that finished as reproduced and reached the bug."""
    if len(traces) != len(bug_reached):
        raise InputError(f"{len(traces)} traces but {len(bug_reached)} bug flags")
    statuses, times = [], []
    for tr in traces:
        if isinstance(tr, dict):
            statuses.append(tr["status"])
            times.append(float(tr.get("wall_time", 0.0)))
        else:
            statuses.append(tr.status)
            times.append(float(tr.wall_time))
    hits = sum(1 for s, b in zip(statuses, bug_reached) if s == "reproduced" and b)
    mean = sum(times) / len(times) if times else 0.0
    return ReproducibilityEval(hits, len(traces), mean)


@dataclass
class EvalReport:
    boundaries: BoundaryEval | None = None
    scenes: BoundaryEval | None = None
    actions: AccuracyEval | None = None
    comparison: LabelEval | None = None
    replay: ReproducibilityEval | None = None
    recordings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {"recordings": self.recordings}
        if self.boundaries is not None:
            b = self.boundaries.to_dict()
            b.pop("matches")
            out["boundaries"] = b
        if self.scenes is not None:
            s = self.scenes.to_dict()
            s.pop("matches")
            out["scenes"] = s
        if self.actions is not None:
            out["action_accuracy"] = self.actions.accuracy
        if self.comparison is not None:
            out["comparison"] = self.comparison.to_dict()
        if self.replay is not None:
            out["reproducibility"] = self.replay.to_dict()
        return out


def _pool(evals: Iterable[BoundaryEval], tolerance: int) -> BoundaryEval:
    matches, n_p, n_t = [], 0, 0
    for e in evals:
        matches.extend(e.matches)
        n_p += e.n_predicted
        n_t += e.n_truth
    return BoundaryEval(tolerance, tuple(matches), n_p, n_t)


def _load(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _boundaries_of(doc: dict) -> list[int]:
    if "boundaries" in doc:
        return sorted(int(b) for b in doc["boundaries"])
    return sorted(int(s["start"]) for s in doc.get("scenes", []))


def evaluate_directories(pred_dir, truth_dir, tolerance: int = DEFAULT_TOLERANCE) -> EvalReport:
    """Pool metrics over every truth file that has a same-named prediction.

    ``<name>.json`` holds scenes, ``<name>.comparison.json`` comparison
    labels and ``<name>.trace.json`` (predictions only) a replay trace whose
    ``bug_reached`` flag serves as the bug-manifested signal.
    """
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    for d in (pred_dir, truth_dir):
        if not d.is_dir():
            raise InputError(f"{d} is not a directory")
    report = EvalReport()
    bounds, scenes, actions = [], [], None
    verdicts, labels = [], []
    for truth_path in sorted(truth_dir.glob("*.json")):
        name = truth_path.name
        pred_path = pred_dir / name
        if not pred_path.exists():
            continue
        truth, pred = _load(truth_path), _load(pred_path)
        if name.endswith(".comparison.json"):
            by_scene = {int(p["scene"]): bool(p["consistent"]) for p in pred}
            for item in truth:
                if int(item["scene"]) in by_scene:
                    verdicts.append(by_scene[int(item["scene"])])
                    labels.append(bool(item["consistent"]))
            report.recordings.append(name)
            continue
        if name.endswith(".trace.json"):
            continue
        bounds.append(match_boundaries(_boundaries_of(pred), _boundaries_of(truth), tolerance))
        scenes.append(scene_eval(pred.get("scenes", []), truth.get("scenes", []), tolerance))
        counts = action_counts(pred.get("scenes", []), truth.get("scenes", []), tolerance)
        actions = counts if actions is None else actions.merge(counts)
        report.recordings.append(name)
    traces = [_load(p) for p in sorted(pred_dir.glob("*.trace.json"))]
    if traces:
        report.replay = reproducibility(traces, [bool(t.get("bug_reached", False)) for t in traces])
        report.recordings.extend(p.name for p in sorted(pred_dir.glob("*.trace.json")))
    if not report.recordings:
        raise InputError(f"no evaluable files shared by {pred_dir} and {truth_dir}")
    if bounds:
        report.boundaries = _pool(bounds, tolerance)
        report.scenes = _pool(scenes, tolerance)
        report.actions = actions
    if labels:
        report.comparison = comparison_eval(verdicts, labels)
    return report


def format_table(report: EvalReport) -> str:
    """Plain-text tables laid out like the usual results tables."""
    lines = []
    if report.scenes is not None:
        lines += ["Action scene segmentation", f"{'Method':<10} {'Precision':>9} {'Recall':>7} {'F1':>6}"]
        s = report.scenes
        lines.append(f"{'ours':<10} {s.precision:>9.2f} {s.recall:>7.2f} {s.f1:>6.2f}")
        b = report.boundaries
        lines.append(f"{'(bounds)':<10} {b.precision:>9.2f} {b.recall:>7.2f} {b.f1:>6.2f}")
        lines.append("")
    if report.actions is not None:
        acc = report.actions.accuracy
        lines += ["Action type accuracy", f"{'Method':<10} " + " ".join(f"{t.capitalize():>7}" for t in ACTION_TYPES)]
        cells = " ".join(f"{acc[t]:>7.2f}" if t in acc else f"{'-':>7}" for t in ACTION_TYPES)
        lines += [f"{'ours':<10} {cells}", ""]
    if report.comparison is not None:
        c = report.comparison
        lines += ["GUI state comparison", f"{'Method':<10} {'Precision':>9} {'Recall':>7} {'F1':>6}"]
        lines += [f"{'ours':<10} {c.precision:>9.2f} {c.recall:>7.2f} {c.f1:>6.2f}", ""]
    if report.replay is not None:
        r = report.replay
        lines += ["Reproducibility", f"{'Method':<10} {'Rate':>7} {'Time (s)':>9}"]
        lines += [f"{'ours':<10} {100 * r.rate:>6.1f}% {r.mean_wall_time:>9.1f}", ""]
    return "\n".join(lines).rstrip() + "\n"
