from __future__ import annotations

import itertools

import pytest

from femagents.chat import CodeBlock
from femagents.sandbox import ExecutionReport, ExitStatus

FAIL_MARKER = "FAIL_ME"


def make_clock(start: float = 1000.0, step: float = 1.0):
    counter = itertools.count()
    return lambda: start + step * next(counter)


def scripted_runner(code: CodeBlock, _config) -> ExecutionReport:
    """Deterministic execution stand-in: code containing FAIL_ME fails."""
    failed = FAIL_MARKER in code.source
    return ExecutionReport(
        exit_status=ExitStatus.NONZERO if failed else ExitStatus.SUCCESS,
        exit_code=1 if failed else 0,
        stdout="" if failed else "ok\n",
        stderr="Traceback: scripted failure" if failed else "",
        stdout_truncated=False,
        stderr_truncated=False,
        duration=0.01,
    )


@pytest.fixture
def clock():
    return make_clock()
