from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from femagents.chat import (
    AgentKind,
    AgentSpec,
    BudgetTooSmallError,
    ChatError,
    ChatMessage,
    MessageKind,
    SessionStatus,
    TerminalTranscriptError,
    Transcript,
    canonical_bytes,
    extract_code_blocks,
    load_transcript,
    render_context,
    save_transcript,
)
from femagents.gateway import EndpointConfig

from conftest import make_clock

ENDPOINT = EndpointConfig(base_url="http://localhost:9", model_name="m")


def coder_spec(system_prompt="You are the coder."):
    return AgentSpec("coder", AgentKind.ASSISTANT, system_prompt, ENDPOINT,
                     coordinator_eligible=True)


def test_first_append_gets_seq_1():
    t = Transcript("s1", clock=make_clock())
    msg = t.append("coder", MessageKind.CODE, "print(1)")
    assert msg.seq == 1


def test_append_is_successor_of_max_seq():
    t = Transcript("s1", clock=make_clock())
    for _ in range(7):
        t.append("coder", MessageKind.TEXT, "x")
    assert t.append("coder", MessageKind.TEXT, "y").seq == 8


def test_append_to_terminal_transcript_raises():
    t = Transcript("s1", clock=make_clock())
    t.append("coder", MessageKind.TEXT, "x")
    t.finish(SessionStatus.SUCCEEDED)
    with pytest.raises(TerminalTranscriptError):
        t.append("coder", MessageKind.TEXT, "y")


def test_status_transition_is_monotone():
    t = Transcript("s1")
    t.finish(SessionStatus.FAILED)
    with pytest.raises(TerminalTranscriptError):
        t.finish(SessionStatus.SUCCEEDED)


def test_exec_report_only_from_executor():
    t = Transcript("s1")
    with pytest.raises(ChatError):
        t.append("coder", MessageKind.EXEC_REPORT, "{}")
    t.append("executor", MessageKind.EXEC_REPORT, "{}")


def test_extract_two_fenced_blocks_in_order():
    msg = ChatMessage(1, "coder", MessageKind.TEXT,
                      "intro\n```python\na = 1\n```\nmiddle\n```\nb = 2\n```\n",
                      0.0)
    blocks = extract_code_blocks(msg)
    assert [b.index for b in blocks] == [0, 1]
    assert blocks[0].language_tag == "python"
    assert blocks[0].source == "a = 1\n"
    assert blocks[1].source == "b = 2\n"


def test_extract_unfenced_code_kind_is_whole_content():
    msg = ChatMessage(1, "coder", MessageKind.CODE, "x = 1\n", 0.0)
    blocks = extract_code_blocks(msg)
    assert len(blocks) == 1
    assert blocks[0].source == "x = 1\n"


def test_extract_prose_text_is_empty():
    msg = ChatMessage(1, "planner", MessageKind.TEXT, "just words", 0.0)
    assert extract_code_blocks(msg) == []


def test_extract_idempotent_on_reserialized_output():
    msg = ChatMessage(1, "coder", MessageKind.TEXT,
                      "```python\nprint('hi')\n```", 0.0)
    blocks = extract_code_blocks(msg)
    refenced = "".join(f"```{b.language_tag}\n{b.source}```\n" for b in blocks)
    again = extract_code_blocks(
        ChatMessage(2, "coder", MessageKind.TEXT, refenced, 0.0))
    assert [b.source for b in again] == [b.source for b in blocks]


def test_render_context_no_truncation_keeps_order():
    t = Transcript("s1", clock=make_clock())
    t.append("user", MessageKind.TEXT, "problem")
    t.append("coder", MessageKind.CODE, "code")
    t.append("executor", MessageKind.EXEC_REPORT, "{}")
    ctx = render_context(t, coder_spec(), window_budget=10_000)
    assert ctx.messages[0]["role"] == "system"
    assert len(ctx.messages) == 4
    assert "[user] problem" in ctx.messages[1]["content"]


def test_render_context_drops_oldest_first_pins_problem():
    # 10 messages of 40 chars each = 10 tokens each at chars/4.
    t = Transcript("s1", clock=make_clock())
    for i in range(10):
        t.append("user" if i == 0 else "coder", MessageKind.TEXT,
                 f"m{i:02d}" + "x" * 36)
    spec = coder_spec(system_prompt="s" * 40)  # 10 tokens
    # Enumerated with the 4-chars-per-token estimator: system=10,
    # pinned "[user] m00..." = 12, each coder message = 10; total 112.
    # Budget 55 forces dropping m01..m06 oldest-first, keeping the
    # pinned problem plus m07, m08, m09.
    ctx = render_context(t, spec, window_budget=55)
    rendered = [m["content"] for m in ctx.messages[1:]]
    assert rendered[0].startswith("[user] m00")
    assert [r[:3] if not r.startswith("[") else "m00" for r in rendered] == [
        "m00", "m07", "m08", "m09"]


def test_render_context_budget_too_small():
    t = Transcript("s1", clock=make_clock())
    t.append("user", MessageKind.TEXT, "p" * 400)
    with pytest.raises(BudgetTooSmallError):
        render_context(t, coder_spec(), window_budget=50)


def test_render_context_requires_assistant():
    t = Transcript("s1")
    proxy = AgentSpec("admin", AgentKind.USER_PROXY, "")
    with pytest.raises(ChatError):
        render_context(t, proxy, 1000)


def test_persistence_round_trip(tmp_path):
    t = Transcript("s1", clock=make_clock(), roster_names=["coder", "executor"])
    t.append("user", MessageKind.TEXT, "problem Ω")
    t.append("coder", MessageKind.CODE, "```python\nx=1\n```")
    t.finish(SessionStatus.SUCCEEDED)
    path = tmp_path / "t.jsonl"
    save_transcript(t, path)
    loaded = load_transcript(path)
    assert loaded.session_id == t.session_id
    assert loaded.status == t.status
    assert loaded.roster_names == t.roster_names
    assert [m.to_dict() for m in loaded.messages] == [m.to_dict() for m in t.messages]


def test_replay_renders_identically(tmp_path):
    t = Transcript("s1", clock=make_clock())
    t.append("user", MessageKind.TEXT, "problem")
    t.append("coder", MessageKind.TEXT, "reply")
    path = tmp_path / "t.jsonl"
    save_transcript(t, path)
    loaded = load_transcript(path)
    spec = coder_spec()
    for budget in (30, 100, 10_000):
        assert render_context(t, spec, budget) == render_context(loaded, spec, budget)


def test_canonical_bytes_ignores_timestamps():
    a = Transcript("s1", clock=make_clock(start=1.0))
    b = Transcript("s1", clock=make_clock(start=999.0))
    for t in (a, b):
        t.append("user", MessageKind.TEXT, "p")
        t.append("coder", MessageKind.TEXT, "r")
    assert canonical_bytes(a) == canonical_bytes(b)


@given(st.lists(st.text(min_size=1, max_size=20), min_size=1, max_size=20))
def test_seq_sorted_is_identity(contents):
    t = Transcript("s1", clock=make_clock())
    for c in contents:
        t.append("coder", MessageKind.TEXT, c)
    seqs = [m.seq for m in t.messages]
    assert seqs == sorted(seqs) == list(range(1, len(contents) + 1))


def test_eligibility_partition():
    from femagents.chat import CONTROL_ROLES, ELIGIBLE_ROLES, INELIGIBLE_ROLES

    assert ELIGIBLE_ROLES == {"planner", "formulator", "coder", "evaluator"}
    assert INELIGIBLE_ROLES == {"executor", "corrector"}
    assert CONTROL_ROLES == {"coordinator", "admin"}
    with pytest.raises(ValueError):
        AgentSpec("executor", AgentKind.USER_PROXY, "", coordinator_eligible=True)
