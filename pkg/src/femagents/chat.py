"""Message, transcript, and role model shared by both agent frameworks.

A session is a totally ordered, replayable record of events: every agent
reads and appends to the same transcript. Timestamps are informational
only and are excluded from equality and replay comparisons.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from .gateway import EndpointConfig

CHARS_PER_TOKEN = 4

# Roles directly selectable by the coordinator (the others only act
# inside predefined control-flow functions, or are control roles).
ELIGIBLE_ROLES = frozenset({"planner", "formulator", "coder", "evaluator"})
INELIGIBLE_ROLES = frozenset({"executor", "corrector"})
CONTROL_ROLES = frozenset({"coordinator", "admin"})


class ChatError(Exception):
    """Base class for transcript/context errors."""


class TerminalTranscriptError(ChatError):
    """Append attempted on a transcript that already reached a terminal state."""


class BudgetTooSmallError(ChatError):
    """System prompt plus pinned problem statement alone exceed the budget."""


class MessageKind(str, Enum):
    TEXT = "text"
    CODE = "code"
    EXEC_REPORT = "exec-report"
    CONTROL = "control"


class SessionStatus(str, Enum):
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    EXHAUSTED = "exhausted"
    TERMINATED_BY_ADMIN = "terminated-by-admin"
    FAILED = "failed"


class AgentKind(str, Enum):
    ASSISTANT = "assistant"
    USER_PROXY = "user-proxy"
    MANAGER = "manager"


@dataclass(frozen=True)
class ChatMessage:
    seq: int
    sender: str
    kind: MessageKind
    content: str
    created_at: float

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "sender": self.sender,
            "kind": self.kind.value,
            "content": self.content,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChatMessage":
        return cls(
            seq=d["seq"],
            sender=d["sender"],
            kind=MessageKind(d["kind"]),
            content=d["content"],
            created_at=d["created_at"],
        )


@dataclass(frozen=True)
class CodeBlock:
    index: int
    language_tag: str
    source: str


@dataclass(frozen=True)
class AgentSpec:
    name: str
    kind: AgentKind
    system_prompt: str
    endpoint: "EndpointConfig | None" = None
    coordinator_eligible: bool = False

    def __post_init__(self) -> None:
        if self.kind is AgentKind.ASSISTANT and self.endpoint is None:
            raise ValueError(f"assistant agent {self.name!r} requires an endpoint")
        if self.kind is AgentKind.USER_PROXY and self.endpoint is not None:
            raise ValueError(f"user-proxy agent {self.name!r} must not carry an endpoint")
        if self.name in INELIGIBLE_ROLES | CONTROL_ROLES and self.coordinator_eligible:
            raise ValueError(f"role {self.name!r} cannot be coordinator-eligible")


class Transcript:
    """Strictly ordered message log for one session.

    Single-writer: callers must not append concurrently. Status moves
    from running to exactly one terminal state and never back.
    """

    def __init__(
        self,
        session_id: str,
        clock: Callable[[], float] = time.time,
        roster_names: list[str] | None = None,
    ):
        self.session_id = session_id
        self.messages: list[ChatMessage] = []
        self.status = SessionStatus.RUNNING
        self.roster_names = list(roster_names or [])
        self._clock = clock

    def append(self, sender: str, kind: MessageKind, content: str) -> ChatMessage:
        if self.status is not SessionStatus.RUNNING:
            raise TerminalTranscriptError(
                f"transcript {self.session_id} is {self.status.value}"
            )
        if kind is MessageKind.EXEC_REPORT and sender != "executor":
            raise ChatError("exec-report messages are emitted only by the executor")
        seq = self.messages[-1].seq + 1 if self.messages else 1
        msg = ChatMessage(seq=seq, sender=sender, kind=kind, content=content,
                          created_at=self._clock())
        self.messages.append(msg)
        return msg

    def finish(self, status: SessionStatus) -> None:
        if self.status is not SessionStatus.RUNNING:
            raise TerminalTranscriptError(
                f"transcript {self.session_id} already {self.status.value}"
            )
        if status is SessionStatus.RUNNING:
            raise ValueError("finish requires a terminal status")
        self.status = status


def append_message(
    transcript: Transcript, sender: str, kind: MessageKind, content: str
) -> Transcript:
    """Append one message; returns the same transcript for chaining."""
    transcript.append(sender, kind, content)
    return transcript


_FENCE_RE = re.compile(r"^```([^\n`]*)\n(.*?)^```\s*$", re.MULTILINE | re.DOTALL)


def extract_code_blocks(message: ChatMessage) -> list[CodeBlock]:
    """Fenced blocks in document order; whole content for unfenced kind=code."""
    if message.kind not in (MessageKind.TEXT, MessageKind.CODE):
        raise ChatError(f"cannot extract code from kind={message.kind.value}")
    blocks: list[CodeBlock] = []
    for match in _FENCE_RE.finditer(message.content):
        source = match.group(2)
        if source.strip():
            blocks.append(CodeBlock(index=len(blocks),
                                    language_tag=match.group(1).strip(),
                                    source=source))
    if not blocks and message.kind is MessageKind.CODE and message.content.strip():
        blocks.append(CodeBlock(index=0, language_tag="", source=message.content))
    return blocks


def estimate_tokens(text: str) -> int:
    # chars/4 heuristic: provider-agnostic, monotone, cheap.
    return (len(text) + CHARS_PER_TOKEN - 1) // CHARS_PER_TOKEN


@dataclass(frozen=True)
class PromptContext:
    """Chat-completion style message list: system prompt, then history."""

    messages: tuple[dict, ...]

    def estimated_tokens(self) -> int:
        return sum(estimate_tokens(m["content"]) for m in self.messages)

    def latest_user_content(self) -> str:
        for m in reversed(self.messages):
            if m["role"] == "user":
                return m["content"]
        return ""


def render_context(
    transcript: Transcript, agent_spec: AgentSpec, window_budget: int
) -> PromptContext:
    """System prompt plus transcript history, truncated oldest-first.

    The original problem statement (seq=1) is pinned: it survives any
    truncation. Raises when system prompt + problem statement alone
    exceed the budget.
    """
    if agent_spec.kind is not AgentKind.ASSISTANT:
        raise ChatError(f"agent {agent_spec.name!r} is not an assistant")

    def as_chat(msg: ChatMessage) -> dict:
        if msg.sender == agent_spec.name:
            return {"role": "assistant", "content": msg.content}
        return {"role": "user", "content": f"[{msg.sender}] {msg.content}"}

    system = {"role": "system", "content": agent_spec.system_prompt}
    history = [as_chat(m) for m in transcript.messages]

    fixed = estimate_tokens(system["content"])
    if history:
        fixed += estimate_tokens(history[0]["content"])
    if fixed > window_budget:
        raise BudgetTooSmallError(
            f"budget {window_budget} below system+problem size {fixed}"
        )

    total = estimate_tokens(system["content"]) + sum(
        estimate_tokens(m["content"]) for m in history
    )
    # Drop oldest non-pinned messages until within budget.
    kept = list(history)
    drop_at = 1  # index 0 is the pinned problem statement
    while total > window_budget and drop_at < len(kept):
        total -= estimate_tokens(kept[drop_at]["content"])
        del kept[drop_at]
    return PromptContext(messages=(system, *kept))


# --- persistence: one header line, then one JSON object per message ---


def save_transcript(transcript: Transcript, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "session_id": transcript.session_id,
            "status": transcript.status.value,
            "roster": transcript.roster_names,
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for msg in transcript.messages:
            fh.write(json.dumps(msg.to_dict(), ensure_ascii=False) + "\n")


def load_transcript(path: str | Path) -> Transcript:
    with Path(path).open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        transcript = Transcript(header["session_id"], roster_names=header["roster"])
        for line in fh:
            if line.strip():
                transcript.messages.append(ChatMessage.from_dict(json.loads(line)))
    transcript.status = SessionStatus(header["status"])
    return transcript


def canonical_bytes(transcript: Transcript) -> bytes:
    """Replay-comparison form: wall-clock fields zeroed out.

    Timestamps and execution durations are informational; two runs of
    the same scripted session must compare equal on everything else.
    """
    rows = []
    for msg in transcript.messages:
        d = msg.to_dict()
        d["created_at"] = 0.0
        if msg.kind is MessageKind.EXEC_REPORT:
            try:
                payload = json.loads(msg.content)
                payload.pop("duration", None)
                d["content"] = json.dumps(payload, sort_keys=True)
            except (json.JSONDecodeError, AttributeError):
                pass
        rows.append(d)
    doc = {
        "session_id": transcript.session_id,
        "status": transcript.status.value,
        "messages": rows,
    }
    return json.dumps(doc, sort_keys=True, ensure_ascii=False).encode("utf-8")
