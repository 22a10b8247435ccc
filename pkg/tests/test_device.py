import json

import cv2
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidreplay.actions import BACK, ReplayAction
from vidreplay.device import AdbDevice, SimDevice, app_from_dict, load_sim_app
from vidreplay.device.base import scroll_gesture
from vidreplay.device.bridge import escape_input_text
from vidreplay.errors import DeviceError, InputError, ValidationError
from vidreplay.perception import extract_elements, parse_bounds


def three_screens():
    return {
        "initial": "s0",
        "bug_screens": ["s2"],
        "screens": {
            "s0": {"elements": [{"id": 1, "text": "Open", "rect": [10, 40, 80, 30], "clickable": True},
                                {"id": 2, "text": "Name", "rect": [10, 90, 120, 30], "editable": True}]},
            "s1": {"elements": [{"id": 1, "text": "Crash", "rect": [10, 40, 80, 30], "clickable": True}]},
            "s2": {"elements": []},
        },
        "transitions": [
            {"from": "s0", "action": "tap", "match": {"text": "Open"}, "to": "s1"},
            {"from": "s1", "action": "tap", "match": {"id": 1}, "to": "s2"},
        ],
    }


def rect_of(device, element_id):
    return device.screen.element(element_id).rect


def test_load_fidelity(tmp_path):
    path = tmp_path / "app.json"
    path.write_text(json.dumps(three_screens()))
    app = load_sim_app(path)
    assert set(app.screens) == {"s0", "s1", "s2"}
    assert [(t.source, t.action, dict(t.match), t.target) for t in app.transitions] == [
        ("s0", "tap", {"text": "Open"}, "s1"),
        ("s1", "tap", {"id": 1}, "s2"),
    ]
    assert app.initial == "s0" and app.bug_screens == {"s2"}
    assert app.screens["s0"].element(2).editable


def test_unknown_screen_is_named():
    data = three_screens()
    data["transitions"].append({"from": "s1", "action": "back", "to": "X"})
    with pytest.raises(ValidationError, match="'X'"):
        app_from_dict(data)


def test_duplicate_keys_rejected():
    data = three_screens()
    data["transitions"].append({"from": "s0", "action": "tap", "match": {"text": "Open"}, "to": "s2"})
    with pytest.raises(ValidationError, match="duplicate"):
        app_from_dict(data)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.update(initial="nowhere"),
        lambda d: d.update(bug_screens=["ghost"]),
        lambda d: d["screens"]["s1"]["elements"].append({"id": 1, "rect": [0, 0, 5, 5]}),
        lambda d: d["screens"]["s1"]["elements"].append({"id": 9, "rect": [170, 0, 50, 5]}),
        lambda d: d["transitions"].append({"from": "s0", "action": "fly", "to": "s1"}),
        lambda d: d["transitions"].append({"from": "s0", "action": "tap", "match": {"text": "Nope"}, "to": "s1"}),
        lambda d: d["transitions"].append({"from": "s0", "action": "input", "match": {"id": 2}, "to": "s1"}),
        lambda d: d["transitions"].append({"from": "s0", "action": "scroll", "match": {"direction": "left"}, "to": "s1"}),
        lambda d: d["transitions"].append({"from": "s0", "action": "tap", "match": {"id": 1}, "to": "s2"}),
        lambda d: d.pop("initial"),
    ],
)
def test_validation_errors(mutate):
    data = three_screens()
    mutate(data)
    with pytest.raises(ValidationError):
        app_from_dict(data)


def test_load_errors(tmp_path):
    with pytest.raises(InputError):
        load_sim_app(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        load_sim_app(tmp_path / "bad.json")


def test_capture_at_initial_screen():
    device = SimDevice(app_from_dict(three_screens()), clock=lambda: 5.0)
    a, b = device.capture(), device.capture()
    assert a.screen_id == "s0" and a.taken_at == 5.0
    assert a.capture_id != b.capture_id
    assert np.array_equal(a.pixels, b.pixels) and a.hierarchy == b.hierarchy
    elements = extract_elements(a.hierarchy)
    assert [e.text for e in elements] == ["Open", "Name"]
    assert a.size == (180, 320)


def test_hierarchy_bounds_inside_raster():
    device = SimDevice(app_from_dict(three_screens()))
    shot = device.capture()
    height, width = shot.pixels.shape[:2]
    for el in extract_elements(shot.hierarchy):
        x, y, w, h = el.rect
        assert 0 <= x and 0 <= y and x + w <= width and y + h <= height


def test_disconnected_device():
    device = SimDevice(app_from_dict(three_screens()))
    device.disconnect()
    with pytest.raises(DeviceError):
        device.capture()
    with pytest.raises(DeviceError):
        device.act(ReplayAction.tap(BACK))


def test_tap_transition_self_loop_and_back():
    device = SimDevice(app_from_dict(three_screens()))
    device.act(ReplayAction.tap(2), rect_of(device, 2))  # no rule for Name: self-loop
    assert device.current == "s0"
    device.act(ReplayAction.tap(BACK))  # back at the root stays put
    assert device.current == "s0"
    device.act(ReplayAction.tap(1), rect_of(device, 1))
    assert device.current == "s1"
    device.act(ReplayAction.tap(BACK))
    assert device.current == "s0"
    assert not device.bug_reached


def test_explicit_back_overrides_stack():
    data = three_screens()
    data["transitions"].append({"from": "s1", "action": "back", "to": "s2"})
    device = SimDevice(app_from_dict(data))
    device.act(ReplayAction.tap(1), rect_of(device, 1))
    device.act(ReplayAction.tap(BACK))
    assert device.current == "s2" and device.bug_reached


def test_input_rules():
    data = three_screens()
    data["transitions"] += [
        {"from": "s0", "action": "input", "match": {"id": 2, "value": "boom"}, "to": "s2"},
        {"from": "s0", "action": "input", "match": {"id": 2, "value": "*"}, "to": "s1"},
    ]
    app = app_from_dict(data)
    exact = SimDevice(app)
    exact.act(ReplayAction.input(2, "boom"), rect_of(exact, 2))
    assert exact.current == "s2"
    wild = SimDevice(app)
    before = wild.capture().pixels
    wild.act(ReplayAction.input(2, "hello"), rect_of(wild, 2))
    assert wild.current == "s1"
    wild.act(ReplayAction.tap(BACK))
    assert not np.array_equal(wild.capture().pixels, before)  # typed value is rendered
    with pytest.raises(DeviceError):
        fresh = SimDevice(app)
        fresh.act(ReplayAction.input(1, "x"), rect_of(fresh, 1))  # "Open" is a button, not a field


def test_scroll_and_end():
    data = three_screens()
    data["transitions"].append({"from": "s0", "action": "scroll", "match": {"direction": "down"}, "to": "s1"})
    device = SimDevice(app_from_dict(data))
    device.act(ReplayAction.scroll("up"))
    assert device.current == "s0"
    device.act(ReplayAction.scroll("down"))
    assert device.current == "s1"
    with pytest.raises(InputError):
        device.act(ReplayAction.end())


def test_capture_is_pure():
    device = SimDevice(app_from_dict(three_screens()))
    state = (device.current, list(device.stack), list(device.visited))
    device.capture()
    assert (device.current, list(device.stack), list(device.visited)) == state


# -- properties ---------------------------------------------------------------


def chain_app(n):
    """Screens c0..c{n-1}; on each, element k (1..3) leads to c[(i*3+k) % n]."""
    screens, transitions = {}, []
    for i in range(n):
        screens[f"c{i}"] = {"elements": [{"id": k, "text": f"go{k}", "rect": [10, 30 + 40 * k, 100, 30], "clickable": True} for k in (1, 2, 3)]}
        for k in (1, 2, 3):
            transitions.append({"from": f"c{i}", "action": "tap", "match": {"id": k}, "to": f"c{(i * 3 + k) % n}"})
    return app_from_dict({"initial": "c0", "screens": screens, "transitions": transitions})


APP = chain_app(7)
moves = st.lists(st.sampled_from([1, 2, 3, "back", "up"]), max_size=25)


def run(moves):
    device = SimDevice(APP)
    for m in moves:
        if m == "back":
            device.act(ReplayAction.tap(BACK))
        elif m == "up":
            device.act(ReplayAction.scroll("up"))
        else:
            device.act(ReplayAction.tap(m), rect_of(device, m))
    return device


@given(moves)
def test_simulator_is_deterministic(moves):
    a, b = run(moves), run(moves)
    assert a.current == b.current and a.visited == b.visited


@given(moves, st.sampled_from([1, 2, 3]))
def test_back_returns_to_previous_screen(moves, k):
    device = run(moves)
    before = device.current
    device.act(ReplayAction.tap(k), rect_of(device, k))
    device.act(ReplayAction.tap(BACK))
    assert device.current == before


# -- bridge -------------------------------------------------------------------


class FakeRunner:
    def __init__(self, png):
        self.png = png
        self.commands = []

    def __call__(self, args, timeout):
        self.commands.append(list(args))
        if "screencap" in args:
            return self.png
        if args[-2:] == ["cat", "/sdcard/window_dump.xml"]:
            return b"<hierarchy/>"
        return b""


def fake_png(w=100, h=200):
    return cv2.imencode(".png", np.zeros((h, w, 3), np.uint8))[1].tobytes()


def test_bridge_commands():
    runner = FakeRunner(fake_png())
    device = AdbDevice(serial="emu-1", runner=runner, clock=lambda: 0.0)
    shot = device.capture()
    assert shot.pixels.shape == (200, 100, 3) and shot.hierarchy == "<hierarchy/>"
    runner.commands.clear()
    device.act(ReplayAction.tap(3), (10, 20, 30, 40))
    device.act(ReplayAction.tap(BACK))
    device.act(ReplayAction.scroll("down"))
    device.act(ReplayAction.input(2, "hi there"), (0, 0, 10, 10))
    shell = [c[3:] for c in runner.commands if c[:3] == ["adb", "-s", "emu-1"] and c[3] == "shell"]
    assert ["shell", "input", "tap", "25", "40"] in shell
    assert ["shell", "input", "keyevent", "4"] in shell
    assert ["shell", "input", "swipe", "50", "160", "50", "40", "300"] in shell
    assert shell[-1] == ["shell", "input", "text", "hi%sthere"]


def test_bridge_failures():
    def broken(args, timeout):
        raise OSError("no adb")

    device = AdbDevice(runner=broken)
    with pytest.raises(DeviceError):
        device.capture()
    with pytest.raises(DeviceError):
        AdbDevice(runner=FakeRunner(b"junk")).capture()
    with pytest.raises(DeviceError):
        AdbDevice(runner=FakeRunner(fake_png())).act(ReplayAction.tap(1), None)
    with pytest.raises(InputError):
        AdbDevice(runner=FakeRunner(fake_png())).act(ReplayAction.end())


def test_scroll_gesture_and_escape():
    assert scroll_gesture(100, 200, "down") == (50, 160, 50, 40)
    assert scroll_gesture(100, 200, "up") == (50, 40, 50, 160)
    assert escape_input_text("a b") == "a%sb"
    assert parse_bounds("[0,0][10,20]") == (0, 0, 10, 20)
