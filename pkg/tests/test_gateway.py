from __future__ import annotations

import json

import httpx
import pytest

from femagents.chat import PromptContext
from femagents.gateway import (
    AuthRejectedError,
    BudgetTracker,
    CompletionResult,
    EndpointConfig,
    FinishReason,
    HttpEndpoint,
    MalformedResponseError,
    ScriptExhaustedError,
    ScriptedEndpoint,
    TransportExhaustedError,
    complete,
)


def ctx(user="hello"):
    return PromptContext(messages=(
        {"role": "system", "content": "sys"},
        {"role": "user", "content": user},
    ))


def test_scripted_wildcard_passthrough():
    endpoint = ScriptedEndpoint([("*", "OK")])
    result = complete(endpoint, ctx())
    assert result.content == "OK"
    assert result.finish_reason is FinishReason.STOP


def test_scripted_entries_consumed_once():
    endpoint = ScriptedEndpoint([("*", "first")])
    complete(endpoint, ctx())
    with pytest.raises(ScriptExhaustedError):
        complete(endpoint, ctx())


def test_scripted_substring_matching_in_order():
    endpoint = ScriptedEndpoint([("alpha", "A"), ("*", "B")])
    assert complete(endpoint, ctx("has alpha inside")).content == "A"
    assert complete(endpoint, ctx("has alpha inside")).content == "B"


def test_scripted_does_not_mutate_context():
    endpoint = ScriptedEndpoint([("*", "OK")])
    context = ctx()
    before = tuple(dict(m) for m in context.messages)
    complete(endpoint, context)
    assert tuple(dict(m) for m in context.messages) == before


def _ok_payload(content="hi", usage=True):
    payload = {
        "choices": [{"message": {"role": "assistant", "content": content},
                     "finish_reason": "stop"}],
    }
    if usage:
        payload["usage"] = {"prompt_tokens": 11, "completion_tokens": 7}
    return payload


def make_http(handler, max_retries=2):
    config = EndpointConfig(base_url="http://model.test/v1", model_name="m",
                            max_retries=max_retries)
    sleeps = []
    endpoint = HttpEndpoint(config, transport=httpx.MockTransport(handler),
                            sleeper=sleeps.append)
    return endpoint, sleeps


def test_http_success_with_usage():
    endpoint, _ = make_http(lambda req: httpx.Response(200, json=_ok_payload()))
    result = endpoint.complete(ctx())
    assert result == CompletionResult("hi", 11, 7, FinishReason.STOP)


def test_http_usage_fallback_chars_over_4():
    endpoint, _ = make_http(
        lambda req: httpx.Response(200, json=_ok_payload("abcdefgh", usage=False)))
    result = endpoint.complete(ctx())
    assert result.output_tokens == 2  # 8 chars / 4
    assert result.prompt_tokens == ctx().estimated_tokens()


def test_http_retries_twice_then_succeeds():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise httpx.ConnectError("down", request=request)
        return httpx.Response(200, json=_ok_payload())

    endpoint, sleeps = make_http(handler, max_retries=2)
    result = endpoint.complete(ctx())
    assert result.content == "hi"
    assert calls["n"] == 3
    assert len(sleeps) == 2
    # 1s base, x2 per retry, +/-20% jitter.
    assert 0.8 <= sleeps[0] <= 1.2
    assert 1.6 <= sleeps[1] <= 2.4


def test_http_retry_count_never_exceeds_max():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        raise httpx.ConnectError("down", request=request)

    endpoint, _ = make_http(handler, max_retries=2)
    with pytest.raises(TransportExhaustedError):
        endpoint.complete(ctx())
    assert calls["n"] == 3  # initial + 2 retries


def test_http_auth_failure_not_retried():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(401, json={"error": "bad key"})

    endpoint, _ = make_http(handler)
    with pytest.raises(AuthRejectedError):
        endpoint.complete(ctx())
    assert calls["n"] == 1


def test_http_malformed_payload():
    endpoint, _ = make_http(lambda req: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(MalformedResponseError):
        endpoint.complete(ctx())


def test_auth_credential_not_in_config():
    config = EndpointConfig(base_url="http://x", model_name="m",
                            auth_ref="MY_MODEL_KEY")
    assert "MY_MODEL_KEY" == config.auth_ref
    assert "secret" not in json.dumps(config.__dict__)


def test_budget_tracker_empty_is_zero():
    tracker = BudgetTracker()
    assert tracker.prompt_tokens == 0
    assert tracker.output_tokens == 0
    assert tracker.total == 0


def test_budget_tracker_sums():
    tracker = BudgetTracker()
    tracker.record("coder", CompletionResult("x", 10, 5, FinishReason.STOP))
    tracker.record("coder", CompletionResult("x", 7, 3, FinishReason.STOP))
    assert tracker.prompt_tokens == 17
    assert tracker.output_tokens == 8


def test_budget_tracker_per_agent_split():
    tracker = BudgetTracker()
    tracker.record("coder", CompletionResult("x", 1, 1, FinishReason.STOP))
    tracker.record("coder", CompletionResult("x", 1, 1, FinishReason.STOP))
    tracker.record("evaluator", CompletionResult("x", 1, 1, FinishReason.STOP))
    assert tracker.per_agent_calls == {"coder": 2, "evaluator": 1}
