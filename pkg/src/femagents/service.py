"""HTTP service surface over the file store.

Endpoints (paths are normative for the console):
  GET  /runs                         list run records
  GET  /runs/{id}                    one run record
  POST /runs                         launch a run from a named config
  GET  /sessions/{id}/events?cursor= newline-delimited JSON event stream
  POST /sessions/{id}/gate           submit the admin decision
  GET  /reports/{id}                 report payload

Events are pushed as a long-lived NDJSON response with explicit seq
cursors, so any client can resume after a drop without duplicates.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .chat import AgentKind, AgentSpec, CodeBlock, save_transcript
from .duo import DuoLimits, run_duo
from .gateway import EndpointConfig, FinishReason, HttpEndpoint, ScriptedEndpoint
from .orchestra import (
    AdminChannel,
    GateDecision,
    GateDecisionKind,
    GateSource,
    OrchestraLimits,
    Roster,
    run_orchestra,
)
from .sandbox import ExecutionReport, ExitStatus, SandboxConfig, execute
from .store import FileStore, NotFoundError

TERMINAL_STATUSES = {"succeeded", "exhausted", "terminated-by-admin", "failed"}
DEFAULT_GATE_WAIT = 600.0
STREAM_POLL_SECONDS = 0.1


class LaunchRequest(BaseModel):
    config: str
    problem: str | None = None


class GateRequestBody(BaseModel):
    decision: str


@dataclass
class SessionHandle:
    session_id: str
    status: str = "running"
    pending_gate_seq: int | None = None
    resolved: dict[int, str] = field(default_factory=dict)
    _decision: str | None = None
    _event: threading.Event = field(default_factory=threading.Event)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def open_gate(self, gate_seq: int) -> None:
        with self.lock:
            self.pending_gate_seq = gate_seq
            self._decision = None
            self._event.clear()

    def resolve(self, decision: str) -> bool:
        """True if this call resolved a pending gate."""
        with self.lock:
            if self.pending_gate_seq is None:
                return False
            self.resolved[self.pending_gate_seq] = decision
            self.pending_gate_seq = None
            self._decision = decision
            self._event.set()
            return True

    def wait(self, timeout: float) -> str | None:
        if self._event.wait(timeout):
            return self._decision
        return None


class ServiceAdminChannel(AdminChannel):
    """Gate backed by the HTTP surface: publishes a gate-request event
    and blocks until a decision is posted (or the headless default
    applies after the configured wait)."""

    def __init__(self, store: FileStore, handle: SessionHandle,
                 wait_seconds: float = DEFAULT_GATE_WAIT,
                 timeout_decision: str = "continue"):
        self.store = store
        self.handle = handle
        self.wait_seconds = wait_seconds
        self.timeout_decision = timeout_decision

    def request_decision(self, session_id, evaluator_message, summary) -> GateDecision:
        event = self.store.append_event(session_id, "gate-request", {
            "evaluator_message": evaluator_message,
            "summary": summary,
        })
        self.handle.open_gate(event["event_seq"])
        decision = self.handle.wait(self.wait_seconds)
        if decision is None:
            self.handle.resolve(self.timeout_decision)
            decision = self.timeout_decision
            source = GateSource.AUTO_POLICY
        else:
            source = GateSource.HUMAN
        return GateDecision(GateDecisionKind(decision), time.time(), source)


def _build_endpoint(spec: dict):
    if "scripted" in spec:
        entries = []
        for entry in spec["scripted"]:
            match, reply = entry[0], entry[1]
            finish = FinishReason(entry[2]) if len(entry) > 2 else FinishReason.STOP
            entries.append((match, reply, finish))
        return ScriptedEndpoint(entries)
    return HttpEndpoint(EndpointConfig(**spec["endpoint"]))


def _scripted_runner(fail_marker: str):
    """Execution stand-in for scripted demos: code containing the
    marker fails, everything else succeeds."""

    def runner(code: CodeBlock, _config) -> ExecutionReport:
        failed = fail_marker in code.source
        return ExecutionReport(
            exit_status=ExitStatus.NONZERO if failed else ExitStatus.SUCCESS,
            exit_code=1 if failed else 0,
            stdout="",
            stderr="scripted failure" if failed else "",
            stdout_truncated=False,
            stderr_truncated=False,
            duration=0.0,
        )

    return runner


class RunEngine:
    """Launches orchestration sessions in background threads and
    bridges their gates and events onto the store."""

    def __init__(self, store: FileStore, gate_wait: float = DEFAULT_GATE_WAIT):
        self.store = store
        self.gate_wait = gate_wait
        self.handles: dict[str, SessionHandle] = {}
        self._lock = threading.Lock()

    def handle_for(self, session_id: str) -> SessionHandle | None:
        with self._lock:
            return self.handles.get(session_id)

    def launch(self, config_name: str, problem: str | None) -> dict:
        config, raw = self.store.load_config(config_name)
        kind = config.get("kind", "orchestra")
        run_id = f"{kind}-{uuid.uuid4().hex[:10]}"
        session_id = f"{run_id}-s1"
        prompt = problem or config.get("problem", "")
        if not prompt:
            raise ValueError("no problem statement provided")

        from .store import RunRecord
        record = RunRecord(run_id=run_id, kind=kind, created_at=time.time(),
                           status="running", session_ids=[session_id])
        self.store.save_run(record, raw)

        handle = SessionHandle(session_id=session_id)
        with self._lock:
            self.handles[session_id] = handle

        sandbox = SandboxConfig(**config["sandbox"]) if "sandbox" in config else \
            SandboxConfig(workspace_root=str(self.store.root / "workspaces"))
        runner = (_scripted_runner(config["fail_marker"])
                  if "fail_marker" in config else execute)

        def on_message(msg):
            self.store.append_event(session_id, "message", msg.to_dict())

        def finish(status: str):
            handle.status = status
            self.store.append_event(session_id, "status-change", {"status": status})
            self.store.update_run_status(run_id, status)

        def run_orchestra_job():
            agents = {
                name: AgentSpec(
                    name=name,
                    kind=AgentKind.ASSISTANT,
                    system_prompt=spec.get("system_prompt", f"You are the {name}."),
                    endpoint=_build_endpoint(spec),
                    coordinator_eligible=name in
                    ("planner", "formulator", "coder", "evaluator"),
                )
                for name, spec in config["agents"].items()
            }
            roster = Roster(
                coordinator=agents["coordinator"],
                planner=agents["planner"],
                formulator=agents["formulator"],
                coder=agents["coder"],
                corrector=agents["corrector"],
                evaluator=agents["evaluator"],
                executor=sandbox,
                admin=ServiceAdminChannel(self.store, handle, self.gate_wait),
            )
            limits = OrchestraLimits(**config.get("limits", {}))
            try:
                outcome, transcript = run_orchestra(
                    prompt, roster, limits, session_id=session_id,
                    runner=runner, on_message=on_message,
                )
                save_transcript(transcript, self.store.transcript_path(session_id))
                finish(transcript.status.value)
            except Exception as exc:  # background thread: record, don't crash
                self.store.append_event(session_id, "status-change",
                                        {"status": "failed", "error": str(exc)})
                self.store.update_run_status(run_id, "failed")
                handle.status = "failed"

        def run_duo_job():
            coder_spec = config["agents"]["coder"]
            coder = AgentSpec(
                name="coder", kind=AgentKind.ASSISTANT,
                system_prompt=coder_spec.get("system_prompt", "You are the coder."),
                endpoint=_build_endpoint(coder_spec),
                coordinator_eligible=True,
            )
            limits = DuoLimits(**config.get("limits", {}))
            try:
                outcome, transcript = run_duo(
                    prompt, coder, sandbox, limits, session_id=session_id,
                    runner=runner,
                )
                for msg in transcript.messages:
                    self.store.append_event(session_id, "message", msg.to_dict())
                save_transcript(transcript, self.store.transcript_path(session_id))
                finish(transcript.status.value)
            except Exception as exc:
                self.store.append_event(session_id, "status-change",
                                        {"status": "failed", "error": str(exc)})
                self.store.update_run_status(run_id, "failed")
                handle.status = "failed"

        target = run_duo_job if kind == "duo" else run_orchestra_job
        thread = threading.Thread(target=target, daemon=True, name=f"run-{run_id}")
        thread.start()
        return {"run_id": run_id, "session_id": session_id, "status": "running"}


def create_app(store: FileStore, gate_wait: float = DEFAULT_GATE_WAIT) -> FastAPI:
    app = FastAPI(title="femagents service")
    engine = RunEngine(store, gate_wait=gate_wait)
    app.state.store = store
    app.state.engine = engine

    @app.get("/runs")
    def list_runs():
        return [r.to_dict() for r in store.list_runs()]

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        try:
            return store.load_run(run_id).to_dict()
        except NotFoundError:
            raise HTTPException(status_code=404, detail=f"run {run_id} not found")

    @app.post("/runs", status_code=201)
    def launch_run(body: LaunchRequest):
        try:
            return engine.launch(body.config, body.problem)
        except NotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/sessions/{session_id}/events")
    def stream_events(session_id: str, cursor: int = 0):
        handle = engine.handle_for(session_id)
        if handle is None and not store.read_events(session_id):
            raise HTTPException(status_code=404,
                                detail=f"session {session_id} not found")

        def generate():
            seen = cursor
            while True:
                events = store.read_events(session_id, seen)
                terminal = False
                for event in events:
                    seen = event["event_seq"]
                    yield json.dumps(event, ensure_ascii=False) + "\n"
                    if (event["type"] == "status-change"
                            and event["payload"].get("status") in TERMINAL_STATUSES):
                        terminal = True
                if terminal:
                    return
                live = engine.handle_for(session_id)
                if live is None or live.status in TERMINAL_STATUSES:
                    # Persisted session: emit what exists and stop.
                    remaining = store.read_events(session_id, seen)
                    for event in remaining:
                        seen = event["event_seq"]
                        yield json.dumps(event, ensure_ascii=False) + "\n"
                    return
                time.sleep(STREAM_POLL_SECONDS)

        return StreamingResponse(generate(), media_type="application/x-ndjson")

    @app.post("/sessions/{session_id}/gate")
    def submit_gate(session_id: str, body: GateRequestBody):
        if body.decision not in ("continue", "exit"):
            raise HTTPException(status_code=422, detail="decision must be continue or exit")
        handle = engine.handle_for(session_id)
        if handle is None:
            raise HTTPException(status_code=404,
                                detail=f"session {session_id} has no live gate")
        if handle.resolve(body.decision):
            return {"status": "accepted", "decision": body.decision}
        # Idempotent per gate: re-posting the decision that already
        # resolved the last gate is a no-op acknowledgment.
        with handle.lock:
            last = max(handle.resolved) if handle.resolved else None
        if last is not None and handle.resolved[last] == body.decision:
            return {"status": "acknowledged", "decision": body.decision}
        raise HTTPException(status_code=409, detail="no gate pending")

    @app.get("/reports/{report_id}")
    def get_report(report_id: str):
        try:
            return JSONResponse(store.load_report(report_id))
        except NotFoundError:
            raise HTTPException(status_code=404,
                                detail=f"report {report_id} not found")

    return app
