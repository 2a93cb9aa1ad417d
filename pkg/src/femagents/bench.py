"""Benchmark harness: problem registry, run protocols, grading, and
stratified accuracy reporting.

The registry ships 39 computational-mechanics problems (16 solid, 15
fluid, 8 multiphysics; 13 per difficulty tier). Frameworks run each
problem once; a non-executable final answer is always incorrect, and
correctness otherwise comes from a manual verdict or the optional
scalar comparator.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable

from .chat import AgentSpec, CodeBlock, MessageKind, PromptContext, SessionStatus, Transcript, save_transcript
from .duo import DuoLimits, DuoStatus, extract_code_blocks_from_text, run_duo
from .gateway import complete
from .orchestra import OrchestraLimits, Roster, run_orchestra
from .sandbox import ExecutionReport, SandboxConfig, execute

EXPECTED_TOTAL = 39
EXPECTED_PHYSICS = {"solid": 16, "fluid": 15, "multiphysics": 8}
EXPECTED_DIFFICULTY = {"easy": 13, "medium": 13, "hard": 13}
DEFAULT_SCALAR_REL_TOL = 1e-2

BASELINE_SYSTEM_PROMPT = (
    "You are an expert in finite element analysis. Produce a complete, "
    "runnable FEniCS script that solves the stated problem. Reply with "
    "the script in a fenced code block."
)


class BenchError(Exception):
    pass


class CensusMismatchError(BenchError):
    """Registry counts differ from the expected 39-problem census."""


class ConflictingVerdictError(BenchError):
    """Manual and automatic verdicts disagree; needs human resolution."""


class Physics(str, Enum):
    SOLID = "solid"
    FLUID = "fluid"
    MULTIPHYSICS = "multiphysics"


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    physics: Physics
    difficulty: Difficulty
    prompt: str
    expected_artifacts: tuple[tuple[str, str], ...] = ()
    reported_scalars: tuple[str, ...] = ()


class Correctness(str, Enum):
    YES = "yes"
    NO = "no"
    UNGRADED = "ungraded"


class VerdictSource(str, Enum):
    MANUAL = "manual"
    AUTO_COMPARATOR = "auto-comparator"


@dataclass(frozen=True)
class Verdict:
    problem_id: str
    executable: bool
    correct: Correctness
    verdict_source: VerdictSource | None = None
    notes: str = ""
    grader_id: str = ""

    def __post_init__(self) -> None:
        if self.correct is Correctness.YES and not self.executable:
            raise ValueError("a correct solution must be executable")

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "executable": self.executable,
            "correct": self.correct.value,
            "verdict_source": self.verdict_source.value if self.verdict_source else None,
            "notes": self.notes,
            "grader_id": self.grader_id,
        }


@dataclass
class LedgerEntry:
    problem_id: str
    framework_id: str
    executable: bool
    transcript_ref: str = ""
    final_code: str | None = None
    artifacts: list[dict] = field(default_factory=list)
    scalars: dict[str, float] = field(default_factory=dict)
    verdict: Verdict | None = None

    def to_dict(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "framework_id": self.framework_id,
            "executable": self.executable,
            "transcript_ref": self.transcript_ref,
            "final_code": self.final_code,
            "artifacts": self.artifacts,
            "scalars": self.scalars,
            "verdict": self.verdict.to_dict() if self.verdict else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerEntry":
        verdict = None
        if d.get("verdict"):
            v = d["verdict"]
            verdict = Verdict(
                problem_id=v["problem_id"],
                executable=v["executable"],
                correct=Correctness(v["correct"]),
                verdict_source=VerdictSource(v["verdict_source"]) if v.get("verdict_source") else None,
                notes=v.get("notes", ""),
                grader_id=v.get("grader_id", ""),
            )
        return cls(
            problem_id=d["problem_id"],
            framework_id=d["framework_id"],
            executable=d["executable"],
            transcript_ref=d.get("transcript_ref", ""),
            final_code=d.get("final_code"),
            artifacts=d.get("artifacts", []),
            scalars=d.get("scalars", {}),
            verdict=verdict,
        )


@dataclass
class RunLedger:
    framework_id: str
    entries: dict[str, LedgerEntry] = field(default_factory=dict)

    def add(self, entry: LedgerEntry) -> None:
        if entry.problem_id in self.entries:
            raise BenchError(f"duplicate entry for {entry.problem_id}")
        self.entries[entry.problem_id] = entry

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"framework_id": self.framework_id}) + "\n")
            for pid in sorted(self.entries):
                fh.write(json.dumps(self.entries[pid].to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunLedger":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        ledger = cls(framework_id=header["framework_id"])
        for line in lines[1:]:
            if line.strip():
                entry = LedgerEntry.from_dict(json.loads(line))
                ledger.entries[entry.problem_id] = entry
        return ledger


# --- registry -----------------------------------------------------------


def _parse_problem_file(text: str, filename: str) -> ProblemSpec:
    if "\n---\n" not in text:
        raise BenchError(f"{filename}: missing header separator")
    header_text, prompt = text.split("\n---\n", 1)
    fields: dict[str, str] = {}
    artifacts: list[tuple[str, str]] = []
    scalars: list[str] = []
    for line in header_text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "artifact":
            pattern, _, kind = value.rpartition(" ")
            artifacts.append((pattern.strip(), kind.strip()))
        elif key == "scalar":
            scalars.append(value)
        else:
            fields[key] = value
    return ProblemSpec(
        id=fields["id"],
        physics=Physics(fields["physics"]),
        difficulty=Difficulty(fields["difficulty"]),
        prompt=prompt.strip("\n"),
        expected_artifacts=tuple(artifacts),
        reported_scalars=tuple(scalars),
    )


def load_registry(path: str | Path | None = None) -> list[ProblemSpec]:
    """Load the shipped registry (or one at ``path``) and enforce the
    census: 39 problems, 16/15/8 by physics, 13/13/13 by difficulty."""
    if path is None:
        root = resources.files("femagents").joinpath("registry")
        files = sorted(
            (entry.name, entry.read_text(encoding="utf-8"))
            for entry in root.iterdir() if entry.name.endswith(".txt")
        )
    else:
        files = sorted(
            (p.name, p.read_text(encoding="utf-8"))
            for p in Path(path).glob("*.txt")
        )
    problems = [_parse_problem_file(text, name) for name, text in files]
    problems.sort(key=lambda p: p.id)

    by_physics: dict[str, int] = {}
    by_difficulty: dict[str, int] = {}
    for p in problems:
        by_physics[p.physics.value] = by_physics.get(p.physics.value, 0) + 1
        by_difficulty[p.difficulty.value] = by_difficulty.get(p.difficulty.value, 0) + 1
    if (
        len(problems) != EXPECTED_TOTAL
        or by_physics != EXPECTED_PHYSICS
        or by_difficulty != EXPECTED_DIFFICULTY
    ):
        raise CensusMismatchError(
            f"registry census off: total={len(problems)}, "
            f"physics={by_physics}, difficulty={by_difficulty}"
        )
    return problems


# --- run protocols ------------------------------------------------------


@dataclass(frozen=True)
class BaselineOutcome:
    final_code: CodeBlock | None
    final_report: ExecutionReport | None
    executable: bool
    attempts: int
    transcripts: tuple[Transcript, ...]


def run_baseline_two_shot(
    problem: ProblemSpec,
    endpoint,
    sandbox: SandboxConfig,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
    clock: Callable[[], float] = time.time,
) -> BaselineOutcome:
    """Non-agentic protocol: one zero-shot attempt; if its code does
    not execute, one more attempt in a completely fresh session. The
    second attempt's code is final regardless of its execution result.
    """
    transcripts = []
    final_code = None
    final_report = None
    for attempt in (1, 2):
        # Fresh session each time: no bytes of the previous attempt.
        transcript = Transcript(f"baseline-{problem.id}-a{attempt}-{uuid.uuid4().hex[:8]}",
                                clock=clock, roster_names=["model"])
        transcript.append("user", MessageKind.TEXT, problem.prompt)
        context = PromptContext(messages=(
            {"role": "system", "content": BASELINE_SYSTEM_PROMPT},
            {"role": "user", "content": problem.prompt},
        ))
        result = complete(endpoint, context)
        blocks = extract_code_blocks_from_text(result.content)
        transcript.append("model", MessageKind.CODE if blocks else MessageKind.TEXT,
                          result.content)
        transcript.finish(SessionStatus.SUCCEEDED)
        transcripts.append(transcript)
        final_code = blocks[-1] if blocks else None
        final_report = runner(final_code, sandbox) if final_code else None
        if final_report is not None and final_report.success:
            break
        # Attempt 2's code is taken as final either way.
    executable = final_report is not None and final_report.success
    return BaselineOutcome(
        final_code=final_code,
        final_report=final_report,
        executable=executable,
        attempts=len(transcripts),
        transcripts=tuple(transcripts),
    )


@dataclass
class BenchConfig:
    """Strategy wiring for run_benchmark.

    Factories take a ProblemSpec so scripted endpoints can be minted
    per problem.
    """

    sandbox: SandboxConfig | None = None
    out_dir: str | Path | None = None
    make_coder: Callable[[ProblemSpec], AgentSpec] | None = None
    make_roster: Callable[[ProblemSpec], Roster] | None = None
    make_endpoint: Callable[[ProblemSpec], object] | None = None
    duo_limits: DuoLimits = field(default_factory=DuoLimits)
    orchestra_limits: OrchestraLimits = field(default_factory=OrchestraLimits)
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute


def run_benchmark(
    registry: list[ProblemSpec],
    strategy: str,
    config: BenchConfig,
    framework_id: str | None = None,
    resume_from: str | Path | None = None,
) -> RunLedger:
    """Run every registry problem under one strategy.

    Per-problem failures are recorded as executable=false and the run
    continues. With ``resume_from``, problems already in the saved
    ledger are skipped.
    """
    if strategy not in ("duo", "orchestra", "baseline"):
        raise ValueError(f"unknown strategy {strategy!r}")
    framework_id = framework_id or strategy
    if resume_from and Path(resume_from).exists():
        ledger = RunLedger.load(resume_from)
    else:
        ledger = RunLedger(framework_id=framework_id)

    out_dir = Path(config.out_dir) if config.out_dir else None
    for problem in registry:
        if problem.id in ledger.entries:
            continue
        entry = LedgerEntry(problem_id=problem.id, framework_id=framework_id,
                            executable=False)
        try:
            if strategy == "duo":
                outcome, transcript = run_duo(
                    problem.prompt, config.make_coder(problem), config.sandbox,
                    config.duo_limits, session_id=f"{framework_id}-{problem.id}",
                    out_dir=out_dir, runner=config.runner,
                )
                entry.executable = outcome.status is DuoStatus.EXECUTED_CLEAN
                entry.transcript_ref = outcome.transcript_ref
                entry.final_code = outcome.final_code.source if outcome.final_code else None
                if outcome.final_report:
                    entry.artifacts = [a.to_dict() for a in outcome.final_report.artifacts]
            elif strategy == "orchestra":
                outcome, transcript = run_orchestra(
                    problem.prompt, config.make_roster(problem),
                    config.orchestra_limits,
                    session_id=f"{framework_id}-{problem.id}",
                    out_dir=out_dir, runner=config.runner,
                )
                entry.executable = (outcome.final_report is not None
                                    and outcome.final_report.success)
                entry.transcript_ref = outcome.transcript_ref
                entry.final_code = outcome.final_code.source if outcome.final_code else None
                if outcome.final_report:
                    entry.artifacts = [a.to_dict() for a in outcome.final_report.artifacts]
            else:
                outcome = run_baseline_two_shot(
                    problem, config.make_endpoint(problem), config.sandbox,
                    config.runner,
                )
                entry.executable = outcome.executable
                entry.final_code = outcome.final_code.source if outcome.final_code else None
                entry.transcript_ref = outcome.transcripts[-1].session_id
                if out_dir is not None:
                    out_dir.mkdir(parents=True, exist_ok=True)
                    for t in outcome.transcripts:
                        save_transcript(t, out_dir / f"{t.session_id}.jsonl")
        except Exception as exc:  # per-problem isolation
            entry.executable = False
            entry.verdict = Verdict(problem.id, False, Correctness.NO,
                                    VerdictSource.AUTO_COMPARATOR,
                                    notes=f"run failed: {exc}")
        ledger.add(entry)
        if resume_from:
            ledger.save(resume_from)
    return ledger


# --- grading and reporting ----------------------------------------------


def grade(
    entry: LedgerEntry,
    reference_scalars: dict[str, float] | None = None,
    manual: Correctness | None = None,
    rel_tol: float = DEFAULT_SCALAR_REL_TOL,
    grader_id: str = "",
    confirm_manual: bool = False,
) -> Verdict:
    """Produce a verdict for one ledger entry.

    Non-executable entries are incorrect outright. Otherwise the
    auto-comparator applies when reference scalars exist; a manual
    verdict is authoritative, but a disagreement with the comparator
    is surfaced for re-confirmation first.
    """
    if not entry.executable:
        return Verdict(entry.problem_id, False, Correctness.NO,
                       VerdictSource.AUTO_COMPARATOR, notes="not executable",
                       grader_id=grader_id)
    auto: Correctness | None = None
    notes = ""
    if reference_scalars:
        mismatches = []
        for name, ref in reference_scalars.items():
            produced = entry.scalars.get(name)
            if produced is None:
                mismatches.append(f"{name}: missing")
                continue
            denom = abs(ref) if ref != 0 else 1.0
            if abs(produced - ref) / denom > rel_tol:
                mismatches.append(f"{name}: {produced} vs {ref}")
        auto = Correctness.NO if mismatches else Correctness.YES
        notes = "; ".join(mismatches)
    if manual is not None and auto is not None and manual != auto and not confirm_manual:
        raise ConflictingVerdictError(
            f"{entry.problem_id}: manual={manual.value} vs auto={auto.value}"
        )
    if manual is not None:
        return Verdict(entry.problem_id, True, manual, VerdictSource.MANUAL,
                       notes=notes, grader_id=grader_id)
    if auto is not None:
        return Verdict(entry.problem_id, True, auto,
                       VerdictSource.AUTO_COMPARATOR, notes=notes,
                       grader_id=grader_id)
    return Verdict(entry.problem_id, True, Correctness.UNGRADED, grader_id=grader_id)


def percent_str(correct: int, total: int) -> str:
    """Exact-rational percentage rendered to 2 decimals, half-to-even."""
    if total == 0:
        return "0.00"
    numerator = correct * 10000
    q, r = divmod(numerator, total)
    if 2 * r > total or (2 * r == total and q % 2 == 1):
        q += 1
    return f"{q // 100}.{q % 100:02d}"


@dataclass
class Report:
    framework_id: str
    overall: tuple[int, int, str]
    by_difficulty: dict[str, tuple[int, int, str]]
    by_physics: dict[str, tuple[int, int, str]]
    ungraded: list[str]

    @property
    def accuracy_overall(self) -> Fraction:
        correct, total, _ = self.overall
        return Fraction(correct, total) if total else Fraction(0)

    def to_dict(self) -> dict:
        def cell(t):
            return {"correct": t[0], "total": t[1], "percent": t[2]}
        return {
            "framework_id": self.framework_id,
            "overall": cell(self.overall),
            "by_difficulty": {k: cell(v) for k, v in self.by_difficulty.items()},
            "by_physics": {k: cell(v) for k, v in self.by_physics.items()},
            "ungraded": self.ungraded,
        }


def accuracy_report(ledger: RunLedger, registry: list[ProblemSpec]) -> Report:
    """Overall and stratified accuracy; ungraded entries count as
    incorrect and are flagged."""
    by_id = {p.id: p for p in registry}
    correct_ids = set()
    ungraded = []
    for pid, entry in ledger.entries.items():
        verdict = entry.verdict
        if verdict is None or verdict.correct is Correctness.UNGRADED:
            ungraded.append(pid)
            continue
        if verdict.correct is Correctness.YES:
            correct_ids.add(pid)

    def bucket(problems: list[ProblemSpec]) -> tuple[int, int, str]:
        total = len(problems)
        correct = sum(1 for p in problems if p.id in correct_ids)
        return correct, total, percent_str(correct, total)

    by_difficulty = {
        tier.value: bucket([p for p in registry if p.difficulty is tier])
        for tier in Difficulty
    }
    by_physics = {
        phys.value: bucket([p for p in registry if p.physics is phys])
        for phys in Physics
    }
    return Report(
        framework_id=ledger.framework_id,
        overall=bucket(registry),
        by_difficulty=by_difficulty,
        by_physics=by_physics,
        ungraded=sorted(ungraded),
    )


def emit_report_files(report: Report, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    for axis, data in (("difficulty", report.by_difficulty),
                       ("physics", report.by_physics)):
        bars = [
            {"label": label, "correct": c, "total": t, "percent": p}
            for label, (c, t, p) in data.items()
        ]
        (out / f"plot_{axis}.json").write_text(json.dumps(bars, indent=2))
