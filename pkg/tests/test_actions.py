import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidreplay.actions import BACK, ReplayAction, parse_action, render_action
from vidreplay.errors import InputError, ParseError

MALFORMED = [
    "",
    "tap 5",
    "[tap]",
    "[tap] [0]",
    "[tap] [-3]",
    "[tap] [five]",
    "[scroll] [left]",
    "[input] [3]",
    "[input] [3] []",
    "[end] [now]",
    "[swipe] [up]",
    "[tap]\n[5]",
]


@pytest.mark.parametrize(
    "action, text",
    [
        (ReplayAction.tap(5), "[tap] [5]"),
        (ReplayAction.tap(BACK), "[tap] [back]"),
        (ReplayAction.scroll("up"), "[scroll] [up]"),
        (ReplayAction.scroll("down"), "[scroll] [down]"),
        (ReplayAction.input(3, "hello world"), "[input] [3] [hello world]"),
        (ReplayAction.end(), "[end]"),
    ],
)
def test_render_canonical(action, text):
    assert render_action(action) == text
    assert str(action) == text
    assert parse_action(text) == action


@pytest.mark.parametrize(
    "text, expected",
    [
        ("I think [tap] [5]", ReplayAction.tap(5)),
        ("[TAP] [Back]", ReplayAction.tap(BACK)),
        ("Answer: [scroll]\t[DOWN].", ReplayAction.scroll("down")),
        ("[note] then [tap] [2]", ReplayAction.tap(2)),
        ("[input] [4] [ spaced ]", ReplayAction.input(4, " spaced ")),
        ("First [end], surely", ReplayAction.end()),
    ],
)
def test_parse_in_prose(text, expected):
    assert parse_action(text) == expected


@pytest.mark.parametrize("text", MALFORMED)
def test_malformed(text):
    with pytest.raises(ParseError):
        parse_action(text)


def test_invalid_construction():
    with pytest.raises(InputError):
        ReplayAction.tap(0)
    with pytest.raises(InputError):
        ReplayAction.tap(True)
    with pytest.raises(InputError):
        ReplayAction.scroll("sideways")
    with pytest.raises(InputError):
        ReplayAction.input(2, "a]b")
    with pytest.raises(InputError):
        ReplayAction("end", target=3)
    with pytest.raises(InputError):
        ReplayAction("hover")


def test_mark_id():
    assert ReplayAction.tap(7).mark_id == 7
    assert ReplayAction.tap(BACK).mark_id is None
    assert ReplayAction.input(2, "x").mark_id == 2


values = st.text(
    alphabet=st.characters(blacklist_characters="[]\r\n", blacklist_categories=("Cs",)), min_size=1, max_size=20
)
actions = st.one_of(
    st.integers(1, 10_000).map(ReplayAction.tap),
    st.just(ReplayAction.tap(BACK)),
    st.sampled_from(["up", "down"]).map(ReplayAction.scroll),
    st.builds(ReplayAction.input, st.integers(1, 10_000), values),
    st.just(ReplayAction.end()),
)


@given(actions)
def test_round_trip(action):
    assert parse_action(render_action(action)) == action
