"""Small simulated apps and scripted backends shared by the replay tests."""

import numpy as np

from vidreplay.actions import ReplayAction
from vidreplay.device import SimDevice, app_from_dict
from vidreplay.perception import ScriptedDetector
from vidreplay.recording import StubEmbeddingBackend, prepare_recording
from vidreplay.replay import Backends
from vidreplay.segmentation import segment
from vidreplay.synthetic import record_sim_session
from vidreplay.vlm import RetryPolicy, ScriptedVlmBackend, VlmClient

ROI_MATCH = "Which single region"
COMPARE_MATCH = "[YES/NO]"
ACTION_MATCH = "Legal outputs"
END_MATCH = "All recorded actions have been replayed"


def ladder_app(n_screens=3, early=False):
    """Screens l0..l{n-1}; element 1 ("Next") on each leads one rung up.

    Every screen also has a non-editable label (element 2). With ``early`` an
    extra splash screen precedes l0 and is the initial screen.
    """
    screens, transitions = {}, []
    names = [f"l{i}" for i in range(n_screens)]
    if early:
        names = ["splash"] + names
    for i, name in enumerate(names):
        screens[name] = {
            "elements": [
                {"id": 1, "text": "Next", "rect": [20, 60 + 10 * (i % 3), 120, 36], "clickable": True},
                {"id": 2, "text": f"Page {name}", "rect": [20, 200, 140, 30]},
            ]
        }
        if i + 1 < len(names):
            transitions.append({"from": name, "action": "tap", "match": {"id": 1}, "to": names[i + 1]})
    return app_from_dict({"initial": names[0], "screens": screens, "transitions": transitions})


def ladder_scenes(n_actions=2):
    """Record n_actions taps up the ladder and segment the recording."""
    app = ladder_app(n_actions + 1)
    rec = record_sim_session(app, [ReplayAction.tap(1)] * n_actions, start="l0")
    return segment(prepare_recording(rec, StubEmbeddingBackend()), None).scenes


def script(*rules):
    """Rules as (match, response, repeat) with fixed token counts."""
    return [
        {"match": m, "response": r, "repeat": rep, "input_tokens": 1000, "output_tokens": 5} for m, r, rep in rules
    ]


def backends(rules, retry=None):
    client = VlmClient(
        ScriptedVlmBackend(rules),
        retry=retry or RetryPolicy.immediate(2),
        clock=lambda: 0.0,
        sleep=lambda _: None,
    )
    detector = ScriptedDetector(default=[{"rect": [20, 60, 120, 36], "score": 0.9, "phrase": "button"}])
    return Backends(embedding=StubEmbeddingBackend(), ocr=None, detector=detector, vlm=client)


CORRECT = script(
    (ROI_MATCH, "Region 1", True),
    (END_MATCH, "[end]", True),
    (COMPARE_MATCH, "YES", True),
    (ACTION_MATCH, "[tap] [1]", True),
)


class RandomVlm:
    """Answers every prompt family at random, reproducibly from ``seed``."""

    ACTIONS = ("[tap] [1]", "[tap] [2]", "[tap] [back]", "[scroll] [down]", "[end]", "no idea")

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def complete(self, images, text, max_tokens):
        if ROI_MATCH in text:
            return "Region 1", (100, 2), None
        if COMPARE_MATCH in text:
            return ("YES" if self.rng.random() < 0.5 else "NO"), (100, 1), None
        return self.ACTIONS[int(self.rng.integers(0, len(self.ACTIONS)))], (100, 5), None


def random_backends(seed):
    b = backends([])
    b.vlm.backend = RandomVlm(seed)
    return b


def device_for(app, start=None):
    return SimDevice(app, clock=lambda: 0.0, current=start or "")
