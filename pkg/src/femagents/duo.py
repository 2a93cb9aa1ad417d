"""Two-agent loop: one coder assistant, one executor proxy.

The coder writes code, the executor runs it and feeds back the full
execution report, and the cycle repeats until clean execution, the
round cap, or the session token budget. No human gate exists in this
mode.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from .chat import (
    AgentKind,
    AgentSpec,
    CodeBlock,
    MessageKind,
    SessionStatus,
    Transcript,
    extract_code_blocks,
    render_context,
    save_transcript,
)
from .gateway import BudgetTracker, GatewayError, complete
from .sandbox import ExecutionReport, SandboxConfig, execute

DEFAULT_MAX_ROUNDS = 8
DEFAULT_WINDOW_BUDGET = 100_000
REASK_NOTICE = "Your reply contained no code block. Reply with the complete script in a fenced code block."


@dataclass(frozen=True)
class DuoLimits:
    max_rounds: int = DEFAULT_MAX_ROUNDS
    session_token_budget: int = 1_000_000

    def __post_init__(self) -> None:
        if self.max_rounds < 1 or self.session_token_budget < 1:
            raise ValueError("limits must be strictly positive")


class DuoStatus(str, Enum):
    EXECUTED_CLEAN = "executed-clean"
    EXHAUSTED_ROUNDS = "exhausted-rounds"
    EXHAUSTED_TOKENS = "exhausted-tokens"
    FAILED = "failed"


@dataclass(frozen=True)
class DuoOutcome:
    status: DuoStatus
    rounds_used: int
    final_code: CodeBlock | None
    final_report: ExecutionReport | None
    transcript_ref: str

    def __post_init__(self) -> None:
        if self.status is DuoStatus.EXECUTED_CLEAN:
            assert self.final_report is not None and self.final_report.success


def _coder_turn(transcript, coder, tracker, window_budget) -> tuple[CodeBlock | None, str]:
    """One coder completion with a single re-ask when no code came back.

    Returns (last code block or None, raw reply).
    """
    for attempt in range(2):
        context = render_context(transcript, coder, window_budget)
        result = complete(coder.endpoint, context)
        tracker.record(coder.name, result)
        blocks = extract_code_blocks_from_text(result.content)
        kind = MessageKind.CODE if blocks else MessageKind.TEXT
        transcript.append(coder.name, kind, result.content)
        if blocks:
            return blocks[-1], result.content
        if attempt == 0:
            transcript.append("user", MessageKind.TEXT, REASK_NOTICE)
    return None, result.content


def extract_code_blocks_from_text(content: str) -> list[CodeBlock]:
    from .chat import ChatMessage
    probe = ChatMessage(seq=0, sender="probe", kind=MessageKind.TEXT,
                        content=content, created_at=0.0)
    return extract_code_blocks(probe)


def run_duo(
    problem_prompt: str,
    coder: AgentSpec,
    sandbox: SandboxConfig,
    limits: DuoLimits = DuoLimits(),
    session_id: str | None = None,
    out_dir: str | Path | None = None,
    clock: Callable[[], float] = time.time,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
    window_budget: int = DEFAULT_WINDOW_BUDGET,
) -> tuple[DuoOutcome, Transcript]:
    """Run the coder-executor loop to completion.

    ``runner`` is the execution backend; tests substitute a scripted
    one. Returns the outcome and the full transcript (also persisted
    under ``out_dir`` when given).
    """
    if coder.kind is not AgentKind.ASSISTANT:
        raise ValueError("coder must be an assistant with an endpoint")
    session_id = session_id or f"duo-{uuid.uuid4().hex[:12]}"
    transcript = Transcript(session_id, clock=clock,
                            roster_names=[coder.name, "executor"])
    transcript.append("user", MessageKind.TEXT, problem_prompt)
    tracker = BudgetTracker()

    final_code: CodeBlock | None = None
    final_report: ExecutionReport | None = None
    rounds_used = 0
    status = DuoStatus.EXHAUSTED_ROUNDS

    for _ in range(limits.max_rounds):
        try:
            code, _reply = _coder_turn(transcript, coder, tracker, window_budget)
        except GatewayError:
            status = DuoStatus.FAILED
            break
        if code is None:
            status = DuoStatus.FAILED
            break
        final_code = code
        report = runner(code, sandbox)
        rounds_used += 1
        final_report = report
        transcript.append("executor", MessageKind.EXEC_REPORT, report.to_json())
        if report.success:
            status = DuoStatus.EXECUTED_CLEAN
            break
        if tracker.total >= limits.session_token_budget:
            status = DuoStatus.EXHAUSTED_TOKENS
            break

    transcript.finish(
        SessionStatus.SUCCEEDED
        if status is DuoStatus.EXECUTED_CLEAN
        else SessionStatus.FAILED
        if status is DuoStatus.FAILED
        else SessionStatus.EXHAUSTED
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_transcript(transcript, out / f"{session_id}.jsonl")
        if final_code is not None:
            (out / "final_code.py").write_text(final_code.source, encoding="utf-8")

    outcome = DuoOutcome(
        status=status,
        rounds_used=rounds_used,
        final_code=final_code,
        final_report=final_report,
        transcript_ref=session_id,
    )
    return outcome, transcript
