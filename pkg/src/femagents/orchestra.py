"""Coordinator-driven multi-agent framework.

A coordinator selects the next speaker among planner, formulator,
coder, and evaluator. Selecting the coder enters a predefined
coder-executor-corrector loop; after the evaluator speaks, control
passes to the admin gate, where a human (or the headless auto-policy)
decides whether to exit with the current solution or continue.
The coordinator never terminates on its own, so global caps bound the
session.
"""

from __future__ import annotations

import json
import time
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .chat import (
    AgentKind,
    AgentSpec,
    CodeBlock,
    ELIGIBLE_ROLES,
    MessageKind,
    SessionStatus,
    Transcript,
    render_context,
    save_transcript,
)
from .duo import DuoLimits, extract_code_blocks_from_text
from .gateway import BudgetTracker, GatewayError, complete
from .sandbox import ExecutionReport, SandboxConfig, execute

DEFAULT_MAX_SELECTIONS = 24
DEFAULT_MAX_CODER_LOOPS = 3
DEFAULT_SATISFACTION_MARKER = "SATISFIED"
STATIC_ORDER = ("planner", "formulator", "coder", "evaluator")

SELECT_INSTRUCTION = (
    "Select which agent should speak next. Reply with exactly one of: "
    "planner, formulator, coder, evaluator."
)
CORRECTOR_INSTRUCTION = (
    "The code above failed to execute. Examine the code and the error report "
    "and propose specific modifications for the coder."
)


class GateDecisionKind(str, Enum):
    CONTINUE = "continue"
    EXIT = "exit"


class GateSource(str, Enum):
    HUMAN = "human"
    AUTO_POLICY = "auto-policy"


@dataclass(frozen=True)
class GateDecision:
    decision: GateDecisionKind
    decided_at: float
    source: GateSource


class AdminChannel(ABC):
    """Boundary through which the continue/exit decision arrives."""

    @abstractmethod
    def request_decision(
        self, session_id: str, evaluator_message: str, summary: str
    ) -> GateDecision:
        ...


class AutoPolicyChannel(AdminChannel):
    """Headless gate: exit once the evaluator emits the satisfaction
    marker and the configured number of gate visits has been reached."""

    def __init__(
        self,
        marker: str = DEFAULT_SATISFACTION_MARKER,
        min_visits: int = 1,
        clock: Callable[[], float] = time.time,
    ):
        self.marker = marker
        self.min_visits = min_visits
        self.visits = 0
        self._clock = clock

    def request_decision(self, session_id, evaluator_message, summary) -> GateDecision:
        self.visits += 1
        satisfied = self.marker in evaluator_message and self.visits >= self.min_visits
        kind = GateDecisionKind.EXIT if satisfied else GateDecisionKind.CONTINUE
        return GateDecision(kind, self._clock(), GateSource.AUTO_POLICY)


class ScriptedAdminChannel(AdminChannel):
    """Test double replaying a fixed decision sequence as human input."""

    def __init__(self, decisions: list[str], clock: Callable[[], float] = time.time):
        self._decisions = [GateDecisionKind(d) for d in decisions]
        self._clock = clock

    def request_decision(self, session_id, evaluator_message, summary) -> GateDecision:
        if not self._decisions:
            raise RuntimeError("scripted admin channel exhausted")
        return GateDecision(self._decisions.pop(0), self._clock(), GateSource.HUMAN)


class TerminalAdminChannel(AdminChannel):
    """Interactive gate: prompt on the terminal for continue/exit."""

    def request_decision(self, session_id, evaluator_message, summary) -> GateDecision:
        print("\n--- evaluator assessment ---")
        print(evaluator_message)
        print("----------------------------")
        while True:
            answer = input("Admin decision [continue/exit]: ").strip().lower()
            if answer in ("continue", "c"):
                return GateDecision(GateDecisionKind.CONTINUE, time.time(), GateSource.HUMAN)
            if answer in ("exit", "e"):
                return GateDecision(GateDecisionKind.EXIT, time.time(), GateSource.HUMAN)


@dataclass
class Roster:
    coordinator: AgentSpec
    planner: AgentSpec
    formulator: AgentSpec
    coder: AgentSpec
    corrector: AgentSpec
    evaluator: AgentSpec
    executor: SandboxConfig
    admin: AdminChannel

    def __post_init__(self) -> None:
        for role in ("planner", "formulator", "coder", "evaluator"):
            spec: AgentSpec = getattr(self, role)
            if not spec.coordinator_eligible:
                raise ValueError(f"{role} must be coordinator-eligible")
        if self.corrector.coordinator_eligible:
            raise ValueError("corrector is not coordinator-eligible")

    def agent(self, name: str) -> AgentSpec:
        return getattr(self, name)


class OrchestraStatus(str, Enum):
    TERMINATED_BY_ADMIN = "terminated-by-admin"
    EXHAUSTED = "exhausted"
    FAILED = "failed"


@dataclass(frozen=True)
class OrchestraOutcome:
    status: OrchestraStatus
    final_code: CodeBlock | None
    final_report: ExecutionReport | None
    transcript_ref: str
    gate_history: tuple[GateDecision, ...]

    def __post_init__(self) -> None:
        if self.status is OrchestraStatus.TERMINATED_BY_ADMIN:
            assert self.gate_history and self.gate_history[-1].decision is GateDecisionKind.EXIT


@dataclass(frozen=True)
class OrchestraLimits:
    max_selections: int = DEFAULT_MAX_SELECTIONS
    max_coder_loops: int = DEFAULT_MAX_CODER_LOOPS
    coder_loop: DuoLimits = field(default_factory=DuoLimits)
    window_budget: int = 100_000
    session_token_budget: int = 2_000_000


def _heard_roles(transcript: Transcript) -> set[str]:
    return {m.sender for m in transcript.messages}


def coordinator_select(
    transcript: Transcript, roster: Roster, tracker: BudgetTracker,
    window_budget: int = 100_000,
) -> str:
    """Ask the coordinator for the next speaker; malformed replies get
    one re-ask, then the static order fallback (first role not yet
    heard from, else evaluator)."""
    for attempt in range(2):
        try:
            context = render_context(transcript, roster.coordinator, window_budget)
            extra = {"role": "user", "content": SELECT_INSTRUCTION}
            context = type(context)(messages=(*context.messages, extra))
            result = complete(roster.coordinator.endpoint, context)
            tracker.record("coordinator", result)
        except GatewayError:
            break
        name = result.content.strip().lower()
        if name in ELIGIBLE_ROLES:
            return name
    heard = _heard_roles(transcript)
    for role in STATIC_ORDER[:3]:
        if role not in heard:
            return role
    return "evaluator"


def _speak(transcript, spec: AgentSpec, tracker, window_budget) -> str:
    context = render_context(transcript, spec, window_budget)
    result = complete(spec.endpoint, context)
    tracker.record(spec.name, result)
    blocks = extract_code_blocks_from_text(result.content)
    kind = MessageKind.CODE if blocks else MessageKind.TEXT
    transcript.append(spec.name, kind, result.content)
    return result.content


def coder_exec_correct_loop(
    transcript: Transcript,
    roster: Roster,
    limits: OrchestraLimits,
    tracker: BudgetTracker,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
) -> tuple[str, CodeBlock | None, ExecutionReport | None]:
    """Inner loop: coder -> executor -> (corrector -> coder)*.

    Returns ("clean" | "exhausted", last code, last report); control
    always goes back to the coordinator afterwards.
    """
    final_code = None
    final_report = None
    for round_index in range(limits.coder_loop.max_rounds):
        reply = _speak(transcript, roster.coder, tracker, limits.window_budget)
        blocks = extract_code_blocks_from_text(reply)
        if not blocks:
            transcript.append("user", MessageKind.TEXT,
                              "Reply with the complete script in a fenced code block.")
            reply = _speak(transcript, roster.coder, tracker, limits.window_budget)
            blocks = extract_code_blocks_from_text(reply)
            if not blocks:
                return "exhausted", final_code, final_report
        final_code = blocks[-1]
        report = runner(final_code, roster.executor)
        final_report = report
        transcript.append("executor", MessageKind.EXEC_REPORT, report.to_json())
        if report.success:
            return "clean", final_code, final_report
        if round_index + 1 < limits.coder_loop.max_rounds:
            context = render_context(transcript, roster.corrector, limits.window_budget)
            extra = {"role": "user", "content": CORRECTOR_INSTRUCTION}
            context = type(context)(messages=(*context.messages, extra))
            result = complete(roster.corrector.endpoint, context)
            tracker.record("corrector", result)
            transcript.append("corrector", MessageKind.TEXT, result.content)
    return "exhausted", final_code, final_report


def evaluator_admin_gate(
    transcript: Transcript,
    roster: Roster,
    admin_channel: AdminChannel,
    final_code: CodeBlock | None,
) -> GateDecision:
    """Publish the evaluator's latest message on the admin channel and
    append the returned decision as a control message."""
    evaluator_msgs = [m for m in transcript.messages if m.sender == "evaluator"]
    if not evaluator_msgs:
        raise RuntimeError("gate reached without an evaluator message")
    summary = final_code.source if final_code is not None else ""
    decision = admin_channel.request_decision(
        transcript.session_id, evaluator_msgs[-1].content, summary
    )
    transcript.append(
        "admin",
        MessageKind.CONTROL,
        json.dumps({"decision": decision.decision.value, "source": decision.source.value}),
    )
    return decision


def run_orchestra(
    problem_prompt: str,
    roster: Roster,
    limits: OrchestraLimits = OrchestraLimits(),
    session_id: str | None = None,
    out_dir: str | Path | None = None,
    clock: Callable[[], float] = time.time,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
    on_message=None,
) -> tuple[OrchestraOutcome, Transcript]:
    """Drive a full multi-agent session to a terminal state.

    ``on_message`` (if given) is called with each appended ChatMessage;
    the service layer uses it to stream events.
    """
    session_id = session_id or f"orc-{uuid.uuid4().hex[:12]}"
    transcript = Transcript(
        session_id,
        clock=clock,
        roster_names=["coordinator", "planner", "formulator", "coder",
                      "executor", "corrector", "evaluator", "admin"],
    )
    if on_message is not None:
        original_append = transcript.append

        def observed_append(sender, kind, content):
            msg = original_append(sender, kind, content)
            on_message(msg)
            return msg

        transcript.append = observed_append  # type: ignore[method-assign]

    transcript.append("user", MessageKind.TEXT, problem_prompt)
    tracker = BudgetTracker()
    gate_history: list[GateDecision] = []
    final_code: CodeBlock | None = None
    final_report: ExecutionReport | None = None
    status = OrchestraStatus.EXHAUSTED
    coder_loops = 0

    try:
        for _ in range(limits.max_selections):
            selected = coordinator_select(transcript, roster, tracker, limits.window_budget)
            if selected == "coder":
                if coder_loops >= limits.max_coder_loops:
                    break
                coder_loops += 1
                _result, code, report = coder_exec_correct_loop(
                    transcript, roster, limits, tracker, runner
                )
                if code is not None:
                    final_code = code
                if report is not None:
                    final_report = report
            elif selected == "evaluator":
                _speak(transcript, roster.evaluator, tracker, limits.window_budget)
                decision = evaluator_admin_gate(
                    transcript, roster, roster.admin, final_code
                )
                gate_history.append(decision)
                if decision.decision is GateDecisionKind.EXIT:
                    status = OrchestraStatus.TERMINATED_BY_ADMIN
                    break
            else:
                _speak(transcript, roster.agent(selected), tracker, limits.window_budget)
            if tracker.total >= limits.session_token_budget:
                break
    except GatewayError:
        status = OrchestraStatus.FAILED

    transcript.finish(
        SessionStatus.TERMINATED_BY_ADMIN
        if status is OrchestraStatus.TERMINATED_BY_ADMIN
        else SessionStatus.FAILED
        if status is OrchestraStatus.FAILED
        else SessionStatus.EXHAUSTED
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_transcript(transcript, out / f"{session_id}.jsonl")
        if final_code is not None:
            (out / "final_code.py").write_text(final_code.source, encoding="utf-8")

    outcome = OrchestraOutcome(
        status=status,
        final_code=final_code,
        final_report=final_report,
        transcript_ref=session_id,
        gate_history=tuple(gate_history),
    )
    return outcome, transcript
