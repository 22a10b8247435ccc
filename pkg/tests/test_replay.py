import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import (
    ACTION_MATCH,
    COMPARE_MATCH,
    CORRECT,
    END_MATCH,
    ROI_MATCH,
    backends,
    device_for,
    ladder_app,
    ladder_scenes,
    random_backends,
    script,
)
from vidreplay.actions import BACK, ReplayAction
from vidreplay.comparison import ConsistencyVerdict, select_roi
from vidreplay.errors import DeviceError, GroundingError, InferenceError, InputError
from vidreplay.replay import ReplayBudget, ReplayStep, annotate_capture, execute, infer_action, replay_scenes, reproduce
from vidreplay.synthetic import record_sim_session

SCENES = ladder_scenes(2)


def test_fixture_has_two_tap_scenes():
    assert [s.action_type for s in SCENES] == ["tap", "tap"]


def test_two_scene_reproduced_without_exploration():
    trace = replay_scenes(SCENES, device_for(ladder_app(3)), backends(CORRECT))
    assert trace.status == "reproduced"
    assert trace.explore_steps == 0
    assert [render["action"] for render in trace.to_dict()["steps"]] == ["[tap] [1]", "[tap] [1]", "[end]"]
    assert [s.scene_index for s in trace.steps] == [0, 1, 2]


def test_early_start_needs_one_explore_step():
    rules = script(
        (ROI_MATCH, "Region 1", True),
        (END_MATCH, "[end]", True),
        (COMPARE_MATCH, "NO", False),
        (COMPARE_MATCH, "YES", True),
        (ACTION_MATCH, "[tap] [1]", True),
    )
    app = ladder_app(3, early=True)
    trace = replay_scenes(SCENES, device_for(app), backends(rules))
    assert trace.status == "reproduced"
    assert trace.explore_steps == 1
    assert [s.mode for s in trace.steps] == ["explore", "replay", "replay", "replay"]


@pytest.mark.parametrize("max_explore", [0, 1, 3])
def test_always_no_exhausts_budget(max_explore):
    rules = script((ROI_MATCH, "Region 1", True), (COMPARE_MATCH, "NO", True), (ACTION_MATCH, "[tap] [back]", True))
    budget = ReplayBudget(max_explore_per_scene=max_explore)
    trace = replay_scenes(SCENES, device_for(ladder_app(3)), backends(rules), budget)
    assert trace.status == "budget_exhausted"
    assert trace.explore_steps == max_explore * len(SCENES) == len(trace.steps)


def test_total_step_cap():
    rules = script((ROI_MATCH, "Region 1", True), (COMPARE_MATCH, "NO", True), (ACTION_MATCH, "[tap] [back]", True))
    trace = replay_scenes(SCENES, device_for(ladder_app(3)), backends(rules), ReplayBudget(5, 3))
    assert trace.status == "budget_exhausted" and len(trace.steps) == 3


def test_final_turn_without_end_is_not_reproduced():
    rules = script((ROI_MATCH, "Region 1", True), (COMPARE_MATCH, "YES", True), (ACTION_MATCH, "[tap] [1]", True))
    trace = replay_scenes(SCENES, device_for(ladder_app(3)), backends(rules))
    assert trace.status == "budget_exhausted"
    assert trace.steps[-1].scene_index == len(SCENES)


def test_device_failure_is_error_status():
    device = device_for(ladder_app(3))
    device.disconnect()
    trace = replay_scenes(SCENES, device, backends(CORRECT))
    assert trace.status == "error" and "DeviceError" in trace.error
    assert trace.to_dict()["error"]


def test_no_scenes_is_error_status():
    trace = replay_scenes([], device_for(ladder_app(3)), backends(CORRECT))
    assert trace.status == "error"


def test_unscripted_prompt_is_error_status():
    trace = replay_scenes(SCENES, device_for(ladder_app(3)), backends(script((ROI_MATCH, "Region 1", True))))
    assert trace.status == "error" and "InvocationError" in trace.error
    assert trace.usage_log  # failed calls are still accounted


def test_reproduce_end_to_end():
    app = ladder_app(3)
    rec = record_sim_session(app, [ReplayAction.tap(1)] * 2, start="l0")
    clock = iter([10.0, 12.5]).__next__
    trace = reproduce(rec, device_for(app), backends(CORRECT), clock=clock)
    assert trace.status == "reproduced" and trace.wall_time == 2.5
    assert trace.bug_reached is False
    data = json.loads(trace.to_json())
    assert list(data)[:7] == ["status", "scenes", "steps", "totals", "phases", "usage_log", "wall_time"]
    totals = data["totals"]
    assert totals["input_tokens"] == sum(u["input_tokens"] for u in data["usage_log"])


def test_reproduce_static_recording_is_error():
    app = ladder_app(1)
    rec = record_sim_session(app, [], start="l0")
    assert reproduce(rec, device_for(app), backends(CORRECT)).status == "error"


# -- infer_action and execute --------------------------------------------------


def setup_scene():
    scene = SCENES[0]
    client = backends(CORRECT).vlm
    roi = select_roi(scene, backends(CORRECT).detector, client)
    device = device_for(ladder_app(3))
    current = annotate_capture(device.capture())
    return scene, roi, device, current


def verdict(scene, consistent):
    return ConsistencyVerdict(consistent, 1.0, scene, "cap")


def test_infer_consistent_tap():
    scene, roi, _, current = setup_scene()
    b = backends(script((ACTION_MATCH, "[tap] [2]", False)))
    action, usage = infer_action(scene, verdict(scene, True), roi, current, b.vlm)
    assert action == ReplayAction.tap(2) and usage.phase == "action_inference"


def test_infer_inconsistent_back():
    scene, roi, _, current = setup_scene()
    b = backends(script((ACTION_MATCH, "[tap] [back]", False)))
    action, _ = infer_action(scene, verdict(scene, False), roi, current, b.vlm)
    assert action == ReplayAction.tap(BACK)
    assert b.vlm.backend.calls[0]["images"] == 2  # first frame and current screen only


def test_grounding_retry_then_success():
    scene, roi, _, current = setup_scene()
    b = backends(script((ACTION_MATCH, "[tap] [99]", False), (ACTION_MATCH, "[tap] [1]", False)))
    action, usage = infer_action(scene, verdict(scene, True), roi, current, b.vlm)
    assert action == ReplayAction.tap(1) and usage.input_tokens == 2000


def test_grounding_error_after_retries():
    scene, roi, _, current = setup_scene()
    with pytest.raises(GroundingError):
        infer_action(scene, verdict(scene, True), roi, current, backends(script((ACTION_MATCH, "[tap] [99]", True))).vlm)
    with pytest.raises(InferenceError):
        infer_action(scene, verdict(scene, True), roi, current, backends(script((ACTION_MATCH, "hmm", True))).vlm)


def test_execute_examples():
    scene, roi, device, current = setup_scene()
    after = execute(ReplayAction.scroll("down"), device, current)
    assert after.screen_id == "l0"
    after = execute(ReplayAction.tap(1), device, current)
    assert after.screen_id == "l1" and after.capture_id != current.capture_id
    with pytest.raises(DeviceError):
        execute(ReplayAction.input(2, "text"), device, annotate_capture(after))
    same = execute(ReplayAction.end(), device, annotate_capture(after))
    assert same.screen_id == "l1"


def test_step_mode_must_match_verdict():
    scene = SCENES[0]
    with pytest.raises(InputError):
        ReplayStep(0, "replay", verdict(scene, False), ReplayAction.end(), "a", "b", None)
    with pytest.raises(InputError):
        ReplayBudget(max_explore_per_scene=-1)


# -- properties ----------------------------------------------------------------


def check_trace_invariants(trace, device, budget, n_scenes):
    indices = [s.scene_index for s in trace.steps]
    assert indices == sorted(indices)
    for step in trace.steps:
        assert (step.mode == "replay") == step.verdict.consistent
    for i in range(n_scenes):
        assert sum(1 for s in trace.steps if s.scene_index == i and s.mode == "explore") <= budget.max_explore_per_scene
    assert device.actions <= n_scenes * (1 + budget.max_explore_per_scene) + 1
    assert len(trace.steps) <= budget.max_total_steps
    replays = [sum(1 for s in trace.steps if s.scene_index == i and s.mode == "replay") for i in range(n_scenes)]
    reproduced = bool(trace.steps) and trace.steps[-1].action.kind == "end" and replays == [1] * n_scenes
    assert (trace.status == "reproduced") == reproduced


@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(1, 20))
def test_trace_invariants_on_random_scripts(seed, max_explore, max_total):
    budget = ReplayBudget(max_explore, max_total)
    device = device_for(ladder_app(3))
    trace = replay_scenes(SCENES, device, random_backends(seed), budget)
    assert trace.status in ("reproduced", "budget_exhausted", "error")
    check_trace_invariants(trace, device, budget, len(SCENES))
    again = replay_scenes(SCENES, device_for(ladder_app(3)), random_backends(seed), budget)
    assert again.to_json() == trace.to_json()
