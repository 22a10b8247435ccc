import json
import math
from decimal import Decimal

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vidreplay.actions import ReplayAction
from vidreplay.errors import BackendError, InputError, InvocationError, ParseError
from vidreplay.vlm import (
    PHASES,
    HttpChatBackend,
    PriceTable,
    RetryPolicy,
    ScriptedVlmBackend,
    UsageRecord,
    VlmClient,
    account,
    build_action_prompt,
    build_compare_prompt,
    build_roi_prompt,
    format_report,
    invoke,
    parse_response,
)

IMG = np.zeros((20, 10, 3), np.uint8)


def scripted(*responses, tokens=(10, 2)):
    return ScriptedVlmBackend([{"match": "", "response": r, "input_tokens": tokens[0], "output_tokens": tokens[1]} for r in responses])


def no_sleep(_):
    pass


# -- prompts ----------------------------------------------------------------


def test_roi_prompt_lists_regions():
    req = build_roi_prompt(IMG, 3)
    for k in (1, 2, 3):
        assert f"Region {k}" in req.prompt_text
    assert "Region 4" not in req.prompt_text
    assert req.response_schema == "region_index" and req.phase == "roi_selection"
    assert len(req.images) == 1


def test_roi_prompt_edge_cases():
    assert build_roi_prompt(IMG, 1).response_schema == "region_index"
    with pytest.raises(InputError):
        build_roi_prompt(None, 2)
    with pytest.raises(InputError):
        build_roi_prompt(IMG, 0)


def test_compare_prompt():
    req = build_compare_prompt(IMG, IMG)
    assert len(req.images) == 2
    assert req.response_schema == "yes_no"
    assert "[YES/NO]" in req.prompt_text
    assert req.max_output_tokens == 16
    assert len(build_compare_prompt(IMG, IMG, IMG).images) == 3
    with pytest.raises(InputError):
        build_compare_prompt(IMG, None)


def test_action_prompts():
    req = build_action_prompt("consistent", [IMG] * 3, "tap", [1, 2])
    assert "[tap] [element/back]" in req.prompt_text
    assert "Legal outputs:" in req.prompt_text
    assert "tap" in req.prompt_text and "1, 2" in req.prompt_text
    assert req.max_output_tokens == 128 and req.response_schema == "action"
    explore = build_action_prompt("inconsistent", [IMG] * 2, None, [1])
    assert "suggests this action" not in explore.prompt_text
    assert "[tap] [element/back]" in explore.prompt_text
    with pytest.raises(InputError):
        build_action_prompt("consistent", [IMG] * 2, "tap")
    with pytest.raises(InputError):
        build_action_prompt("inconsistent", [IMG] * 3)
    final = build_action_prompt("consistent", [IMG] * 3, "tap", [], final=True)
    assert "answer [end]" in final.prompt_text


# -- parsing ----------------------------------------------------------------


@pytest.mark.parametrize(
    "text, schema, expected",
    [
        ("Region 2", "region_index", 2),
        ("region #4.", "region_index", 4),
        ("3", "region_index", 3),
        ("YES", "yes_no", True),
        ("no.", "yes_no", False),
        ("yes, but the layout differs. No wait", "yes_no", True),
        ("I think [tap] [5]", "action", ReplayAction.tap(5)),
    ],
)
def test_parse_response(text, schema, expected):
    assert parse_response(text, schema) == expected


@pytest.mark.parametrize("text, schema", [("none", "region_index"), ("maybe", "yes_no"), ("tap five", "action"), ("yesterday", "yes_no")])
def test_parse_failures(text, schema):
    with pytest.raises(ParseError):
        parse_response(text, schema)


# -- invoke -----------------------------------------------------------------


def test_invoke_no():
    resp = invoke(build_compare_prompt(IMG, IMG), scripted("NO"), sleep=no_sleep)
    assert resp.parsed is False and resp.confidence == 1.0 and resp.attempts == 1


class Recorder:
    """Scripted answers in order; keeps every prompt it was sent."""

    def __init__(self, *answers, tokens=(100, 3)):
        self.answers = list(answers)
        self.tokens = tokens
        self.prompts = []

    def complete(self, images, text, max_tokens):
        self.prompts.append(text)
        return self.answers.pop(0), self.tokens, None


def test_invoke_garbage_then_yes_sums_usage():
    backend = Recorder("hmm", "YES")
    clock = iter(range(100)).__next__
    resp = invoke(build_compare_prompt(IMG, IMG), backend, RetryPolicy(max_attempts=2), clock=clock, sleep=no_sleep)
    assert resp.parsed is True and resp.attempts == 2
    assert (resp.usage.input_tokens, resp.usage.output_tokens) == (200, 6)
    assert resp.usage.latency == 2
    assert resp.usage.cost == pytest.approx(2 * (100 * 2.5 + 3 * 10) / 1e6, abs=1e-12)
    # The retry carries the failed answer back as corrective context.
    assert "'hmm'" in backend.prompts[1] and backend.prompts[1].startswith(backend.prompts[0])


def test_invoke_exhaustion_carries_attempt_texts():
    with pytest.raises(InvocationError) as info:
        invoke(build_compare_prompt(IMG, IMG), scripted("a", "b", "c"), RetryPolicy(max_attempts=3), sleep=no_sleep)
    assert [a["text"] for a in info.value.attempts] == ["a", "b", "c"]
    assert info.value.usage.input_tokens == 30


def test_transport_failure_retried_with_backoff():
    class Flaky:
        def __init__(self):
            self.n = 0

        def complete(self, images, text, max_tokens):
            self.n += 1
            if self.n == 1:
                raise ConnectionError("reset")
            return "Region 1", (5, 1), 0.8

    slept = []
    resp = invoke(build_roi_prompt(IMG, 2), Flaky(), sleep=slept.append)
    assert resp.parsed == 1 and resp.confidence == 0.8
    assert slept == [1.0]
    assert RetryPolicy().delay(1) == 1 and RetryPolicy().delay(2) == 2 and RetryPolicy().delay(9) == 4


def test_validate_hook_triggers_retry():
    def only_two(k):
        if k != 2:
            raise ParseError("out of range")

    resp = invoke(build_roi_prompt(IMG, 2), scripted("Region 7", "Region 2"), validate=only_two, sleep=no_sleep)
    assert resp.parsed == 2 and resp.attempts == 2


def test_client_ledger_records_failures_too():
    client = VlmClient(scripted("x"), retry=RetryPolicy.immediate(1), sleep=no_sleep)
    with pytest.raises(InvocationError):
        client.invoke(build_compare_prompt(IMG, IMG))
    assert len(client.ledger) == 1 and client.ledger[0].phase == "state_comparison"


def test_scripted_backend_rules(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"rules": [{"match": "Region", "response": "Region 1", "repeat": True}]}))
    backend = ScriptedVlmBackend.from_file(path)
    assert backend.complete([IMG], "Region 1?", 4)[0] == "Region 1"
    assert backend.complete([IMG], "Region 1?", 4)[0] == "Region 1"
    with pytest.raises(BackendError):
        backend.complete([IMG], "YES or NO", 4)
    with pytest.raises(InputError):
        ScriptedVlmBackend([{"match": "x"}])


def test_http_backend_wire_format(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(
            200,
            json={
                "choices": [{"message": {"content": "YES"}, "logprobs": {"content": [{"logprob": math.log(0.9)}]}}],
                "usage": {"prompt_tokens": 2318, "completion_tokens": 1},
            },
        )

    monkeypatch.setenv("VIDREPLAY_API_KEY", "secret")
    backend = HttpChatBackend("http://vlm.test/v1", "some-model", transport=httpx.MockTransport(handler))
    text, tokens, prob = backend.complete([IMG, IMG], "Answer [YES/NO].", 16)
    assert (text, tokens) == ("YES", (2318, 1))
    assert prob == pytest.approx(0.9)
    assert seen["auth"] == "Bearer secret"
    parts = seen["body"]["messages"][0]["content"]
    assert [p["type"] for p in parts] == ["text", "image_url", "image_url"]
    assert parts[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert seen["body"]["max_tokens"] == 16


def test_http_backend_errors(monkeypatch):
    monkeypatch.delenv("VIDREPLAY_API_KEY", raising=False)
    with pytest.raises(InputError):
        HttpChatBackend("http://vlm.test", "m")
    monkeypatch.setenv("VIDREPLAY_API_KEY", "k")
    backend = HttpChatBackend("http://vlm.test", "m", transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    with pytest.raises(BackendError):
        backend.complete([IMG], "x", 4)


# -- accounting -------------------------------------------------------------


def test_roi_cost_worked_example():
    expected = Decimal(2324) * Decimal("2.5") / Decimal(10**6) + Decimal(38) * Decimal(10) / Decimal(10**6)
    assert expected == Decimal("0.00619")
    cost = PriceTable().cost(2324, 38)
    assert abs(cost - 0.00619) < 1e-12
    report = account([UsageRecord(2324, 38, 1.0, cost, "roi_selection")]).to_dict()
    assert report["roi_selection"]["cost"] == 0.00619


def test_empty_stream_is_zeroed():
    report = account([]).to_dict()
    assert set(PHASES) <= set(report)
    for phase in list(PHASES) + ["total"]:
        assert report[phase]["calls"] == 0
        assert report[phase]["cost"] == 0 and report[phase]["mean_latency"] == 0


def test_mean_latency_is_sum_over_count():
    records = [UsageRecord(1, 1, lat, 0.0, "state_comparison") for lat in (0.5, 1.25, 3.0)]
    stats = account(records).to_dict()["state_comparison"]
    assert stats["mean_latency"] == pytest.approx((0.5 + 1.25 + 3.0) / 3, abs=1e-12)
    assert stats["calls"] == 3


def test_unknown_phase_goes_to_other():
    report = account([{"phase": "", "input_tokens": 3}]).to_dict()
    assert report["other"]["input_tokens"] == 3


def test_format_report_has_a_row_per_phase():
    text = format_report(account([UsageRecord(10, 1, 0.1, 0.001, "roi_selection")]))
    for phase in PHASES:
        assert phase in text
    assert text.splitlines()[-1].startswith("total")


records = st.lists(
    st.builds(
        UsageRecord,
        st.integers(0, 5000),
        st.integers(0, 200),
        st.floats(0, 30, allow_nan=False),
        st.floats(0, 1, allow_nan=False),
        st.sampled_from(PHASES + ("",)),
    ),
    max_size=15,
)


@given(records, records)
def test_account_is_associative(a, b):
    assert account(a + b).to_dict() == account(a).merge(account(b)).to_dict()
