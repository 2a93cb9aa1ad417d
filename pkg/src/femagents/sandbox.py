"""Sandboxed execution of generated code.

Each run gets a fresh workspace directory, a filtered environment, a
wall-clock timeout, and stream capture with tail-keeping truncation.
Failures of any kind (nonzero exit, timeout, missing interpreter) are
reported in the ExecutionReport rather than raised: the agent loops
must see them as feedback.
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import sys
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .chat import CodeBlock

DEFAULT_ARTIFACT_PATTERNS = ["*.png", "*.xdmf", "*.h5", "*.csv", "*.txt"]
DEFAULT_MAX_STREAM_BYTES = 256 * 1024
SCRIPT_NAME = "main_generated.py"

_KIND_BY_EXT = {
    ".png": "image", ".jpg": "image", ".jpeg": "image", ".gif": "image",
    ".xdmf": "xdmf",
    ".csv": "table", ".h5": "table",
    ".txt": "text", ".log": "text",
}

_exec_semaphore = threading.BoundedSemaphore(os.cpu_count() or 4)


class ExitStatus(str, Enum):
    SUCCESS = "success"
    NONZERO = "nonzero"
    TIMEOUT = "timeout"
    SPAWN_FAILURE = "spawn-failure"


@dataclass(frozen=True)
class SandboxConfig:
    workspace_root: str
    command_template: tuple[str, ...] = (sys.executable, "{script}")
    wall_timeout: float = 600.0
    env_allowlist: tuple[str, ...] = ("PATH", "HOME", "LANG")
    artifact_patterns: tuple[str, ...] = tuple(DEFAULT_ARTIFACT_PATTERNS)
    max_stream_bytes: int = DEFAULT_MAX_STREAM_BYTES


@dataclass(frozen=True)
class Artifact:
    relative_path: str
    size_bytes: int
    content_hash: str
    kind: str

    def to_dict(self) -> dict:
        return {
            "relative_path": self.relative_path,
            "size_bytes": self.size_bytes,
            "content_hash": self.content_hash,
            "kind": self.kind,
        }


@dataclass(frozen=True)
class ExecutionReport:
    exit_status: ExitStatus
    exit_code: int | None
    stdout: str
    stderr: str
    stdout_truncated: bool
    stderr_truncated: bool
    duration: float
    artifacts: tuple[Artifact, ...] = ()
    workspace: str = ""

    @property
    def success(self) -> bool:
        return self.exit_status is ExitStatus.SUCCESS

    def to_dict(self) -> dict:
        return {
            "exit_status": self.exit_status.value,
            "exit_code": self.exit_code,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "stdout_truncated": self.stdout_truncated,
            "stderr_truncated": self.stderr_truncated,
            "duration": self.duration,
            "artifacts": [a.to_dict() for a in self.artifacts],
            "workspace": self.workspace,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExecutionReport":
        return cls(
            exit_status=ExitStatus(d["exit_status"]),
            exit_code=d.get("exit_code"),
            stdout=d["stdout"],
            stderr=d["stderr"],
            stdout_truncated=d["stdout_truncated"],
            stderr_truncated=d["stderr_truncated"],
            duration=d["duration"],
            artifacts=tuple(Artifact(**a) for a in d.get("artifacts", [])),
            workspace=d.get("workspace", ""),
        )


def _truncate_tail(data: bytes, limit: int) -> tuple[str, bool]:
    # Solver logs can be enormous and the useful part is the tail
    # (the traceback), so truncation keeps the LAST bytes.
    truncated = len(data) > limit
    if truncated:
        data = data[-limit:]
    return data.decode("utf-8", errors="replace"), truncated


def artifact_kind(path: str | Path) -> str:
    return _KIND_BY_EXT.get(Path(path).suffix.lower(), "other")


def collect_artifacts(workspace: str | Path, patterns: list[str] | tuple[str, ...]) -> list[Artifact]:
    """Matching files inside the workspace, lexicographic by relative path.

    Symlinks resolving outside the workspace are excluded; unreadable
    files are skipped.
    """
    root = Path(workspace).resolve()
    seen: dict[str, Artifact] = {}
    for pattern in patterns:
        for path in root.rglob(pattern):
            try:
                resolved = path.resolve()
                if not resolved.is_relative_to(root) or not resolved.is_file():
                    continue
                rel = str(path.relative_to(root))
                if rel in seen:
                    continue
                data = path.read_bytes()
            except OSError:
                continue
            seen[rel] = Artifact(
                relative_path=rel,
                size_bytes=len(data),
                content_hash=hashlib.sha256(data).hexdigest(),
                kind=artifact_kind(rel),
            )
    return [seen[rel] for rel in sorted(seen)]


def execute(code: CodeBlock, config: SandboxConfig) -> ExecutionReport:
    """Run one code block in a fresh workspace under the configured limits."""
    if not code.source.strip():
        raise ValueError("code source is empty")
    root = Path(config.workspace_root)
    root.mkdir(parents=True, exist_ok=True)
    workspace = Path(tempfile.mkdtemp(prefix=f"run-{uuid.uuid4().hex[:8]}-", dir=root))
    script = workspace / SCRIPT_NAME
    script.write_text(code.source, encoding="utf-8")

    argv = [part.replace("{script}", str(script)) for part in config.command_template]
    env = {name: os.environ[name] for name in config.env_allowlist if name in os.environ}

    start = time.monotonic()
    try:
        with _exec_semaphore:
            proc = subprocess.run(
                argv,
                cwd=workspace,
                env=env,
                capture_output=True,
                timeout=config.wall_timeout,
            )
        duration = time.monotonic() - start
        stdout, stdout_trunc = _truncate_tail(proc.stdout, config.max_stream_bytes)
        stderr, stderr_trunc = _truncate_tail(proc.stderr, config.max_stream_bytes)
        status = ExitStatus.SUCCESS if proc.returncode == 0 else ExitStatus.NONZERO
        exit_code = proc.returncode
    except subprocess.TimeoutExpired as exc:
        duration = time.monotonic() - start
        stdout, stdout_trunc = _truncate_tail(exc.stdout or b"", config.max_stream_bytes)
        stderr, stderr_trunc = _truncate_tail(exc.stderr or b"", config.max_stream_bytes)
        status = ExitStatus.TIMEOUT
        exit_code = None
    except OSError as exc:
        return ExecutionReport(
            exit_status=ExitStatus.SPAWN_FAILURE,
            exit_code=None,
            stdout="",
            stderr=f"spawn failure: {exc}",
            stdout_truncated=False,
            stderr_truncated=False,
            duration=time.monotonic() - start,
            workspace=str(workspace),
        )

    artifacts = tuple(collect_artifacts(workspace, config.artifact_patterns))
    return ExecutionReport(
        exit_status=status,
        exit_code=exit_code,
        stdout=stdout,
        stderr=stderr,
        stdout_truncated=stdout_trunc,
        stderr_truncated=stderr_trunc,
        duration=duration,
        artifacts=artifacts,
        workspace=str(workspace),
    )


def set_max_concurrent_runs(limit: int) -> None:
    global _exec_semaphore
    _exec_semaphore = threading.BoundedSemaphore(limit)
