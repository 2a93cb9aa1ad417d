from __future__ import annotations

import json

import pytest

from femagents.bench import (
    BenchConfig,
    CensusMismatchError,
    ConflictingVerdictError,
    Correctness,
    Difficulty,
    LedgerEntry,
    Physics,
    ProblemSpec,
    Report,
    RunLedger,
    Verdict,
    VerdictSource,
    accuracy_report,
    emit_report_files,
    grade,
    load_registry,
    percent_str,
    run_baseline_two_shot,
    run_benchmark,
)
from femagents.chat import AgentKind, AgentSpec
from femagents.duo import DuoLimits
from femagents.gateway import CompletionResult, FinishReason, ScriptedEndpoint

from conftest import FAIL_MARKER, make_clock, scripted_runner

GOOD = "```python\nprint('ok')\n```"
BAD = f"```python\n# {FAIL_MARKER}\nraise RuntimeError\n```"


# --- registry ---

def test_registry_census():
    registry = load_registry()
    assert len(registry) == 39
    by_physics = {}
    by_difficulty = {}
    for p in registry:
        by_physics[p.physics.value] = by_physics.get(p.physics.value, 0) + 1
        by_difficulty[p.difficulty.value] = by_difficulty.get(p.difficulty.value, 0) + 1
    assert by_physics == {"solid": 16, "fluid": 15, "multiphysics": 8}
    assert by_difficulty == {"easy": 13, "medium": 13, "hard": 13}


def test_registry_sorted_with_unicode_prompts():
    registry = load_registry()
    ids = [p.id for p in registry]
    assert ids == sorted(ids)
    assert any(any(ord(c) > 127 for c in p.prompt) for p in registry)
    assert all(p.prompt.strip() for p in registry)


def test_registry_scalar_annotations():
    registry = load_registry()
    with_scalars = {p.id for p in registry if p.reported_scalars}
    assert with_scalars == {"fm_q7", "fm_q10", "fm_q11", "fm_q14",
                            "mp_q1", "mp_q6", "mp_q7", "sm_q3", "sm_q4"}
    assert sum(len(p.reported_scalars) for p in registry) == 9


def test_registry_census_enforced(tmp_path):
    (tmp_path / "only.txt").write_text(
        "id: x1\nphysics: solid\ndifficulty: easy\n---\nSolve something.\n")
    with pytest.raises(CensusMismatchError):
        load_registry(tmp_path)


# --- percentage rendering ---

@pytest.mark.parametrize("correct,total,expected", [
    (28, 39, "71.79"),
    (15, 16, "93.75"),
    (11, 15, "73.33"),
    (2, 8, "25.00"),
    (39, 39, "100.00"),
    (0, 39, "0.00"),
    (0, 0, "0.00"),
    (1, 800, "0.12"),   # exactly 0.125, ties to even (12)
    (3, 800, "0.38"),   # exactly 0.375, ties to even (38)
])
def test_percent_str(correct, total, expected):
    assert percent_str(correct, total) == expected


# --- verdicts and grading ---

def entry(executable=True, scalars=None):
    return LedgerEntry(problem_id="fm_q1", framework_id="t",
                       executable=executable, scalars=scalars or {})


def test_correct_implies_executable():
    with pytest.raises(ValueError):
        Verdict("p", executable=False, correct=Correctness.YES)


def test_grade_non_executable_is_incorrect():
    verdict = grade(entry(executable=False), manual=Correctness.YES)
    assert verdict.correct is Correctness.NO
    assert "not executable" in verdict.notes


def test_grade_without_inputs_is_ungraded():
    assert grade(entry()).correct is Correctness.UNGRADED


def test_grade_scalar_within_tolerance():
    verdict = grade(entry(scalars={"c_d": 3.22}), reference_scalars={"c_d": 3.20})
    assert verdict.correct is Correctness.YES
    assert verdict.verdict_source is VerdictSource.AUTO_COMPARATOR


def test_grade_scalar_outside_tolerance():
    verdict = grade(entry(scalars={"c_d": 3.30}), reference_scalars={"c_d": 3.20})
    assert verdict.correct is Correctness.NO
    assert "c_d" in verdict.notes


def test_grade_missing_scalar_is_incorrect():
    verdict = grade(entry(scalars={}), reference_scalars={"c_d": 3.20})
    assert verdict.correct is Correctness.NO


def test_grade_conflict_raises_then_manual_wins():
    e = entry(scalars={"c_d": 9.9})
    with pytest.raises(ConflictingVerdictError):
        grade(e, reference_scalars={"c_d": 3.2}, manual=Correctness.YES)
    verdict = grade(e, reference_scalars={"c_d": 3.2}, manual=Correctness.YES,
                    confirm_manual=True)
    assert verdict.correct is Correctness.YES
    assert verdict.verdict_source is VerdictSource.MANUAL


def test_grade_manual_only():
    verdict = grade(entry(), manual=Correctness.NO, grader_id="g1")
    assert verdict.verdict_source is VerdictSource.MANUAL
    assert verdict.grader_id == "g1"


# --- baseline two-shot protocol ---

PROBLEM = ProblemSpec(id="fm_q1", physics=Physics.FLUID,
                      difficulty=Difficulty.EASY, prompt="Solve the flow.")


class CapturingEndpoint:
    """Replies in order and records every prompt context it sees."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.contexts = []

    def complete(self, context):
        self.contexts.append(context)
        return CompletionResult(self.replies.pop(0), 0, 0, FinishReason.STOP)


def test_baseline_first_shot_success():
    endpoint = CapturingEndpoint([GOOD])
    outcome = run_baseline_two_shot(PROBLEM, endpoint, None,
                                    runner=scripted_runner, clock=make_clock())
    assert outcome.executable
    assert outcome.attempts == 1
    assert len(outcome.transcripts) == 1


def test_baseline_second_shot_fresh_session():
    endpoint = CapturingEndpoint([BAD, GOOD])
    outcome = run_baseline_two_shot(PROBLEM, endpoint, None,
                                    runner=scripted_runner, clock=make_clock())
    assert outcome.executable
    assert outcome.attempts == 2
    # No bytes of attempt 1 reach attempt 2: identical fresh context.
    assert endpoint.contexts[0].messages == endpoint.contexts[1].messages
    assert all(FAIL_MARKER not in m["content"]
               for m in endpoint.contexts[1].messages)
    ids = [t.session_id for t in outcome.transcripts]
    assert ids[0] != ids[1]


def test_baseline_second_shot_final_even_if_failing():
    endpoint = CapturingEndpoint([BAD, BAD])
    outcome = run_baseline_two_shot(PROBLEM, endpoint, None,
                                    runner=scripted_runner, clock=make_clock())
    assert not outcome.executable
    assert outcome.final_code is not None
    assert FAIL_MARKER in outcome.final_code.source


def test_baseline_no_code_at_all():
    endpoint = CapturingEndpoint(["prose", "more prose"])
    outcome = run_baseline_two_shot(PROBLEM, endpoint, None,
                                    runner=scripted_runner, clock=make_clock())
    assert not outcome.executable
    assert outcome.final_code is None
    assert outcome.final_report is None


# --- benchmark runs ---

def mini_registry():
    return [
        ProblemSpec("a1", Physics.FLUID, Difficulty.EASY, "Solve a1."),
        ProblemSpec("a2", Physics.SOLID, Difficulty.MEDIUM, "Solve a2."),
        ProblemSpec("a3", Physics.MULTIPHYSICS, Difficulty.HARD, "Solve a3."),
    ]


def coder_for(problem):
    reply = BAD if problem.id == "a2" else GOOD
    return AgentSpec("coder", AgentKind.ASSISTANT, "You are the coder.",
                     ScriptedEndpoint([("*", reply)] * 3),
                     coordinator_eligible=True)


def test_run_benchmark_duo_ledger():
    config = BenchConfig(make_coder=coder_for, runner=scripted_runner,
                         duo_limits=DuoLimits(max_rounds=2))
    ledger = run_benchmark(mini_registry(), "duo", config, framework_id="f1")
    assert set(ledger.entries) == {"a1", "a2", "a3"}
    assert ledger.entries["a1"].executable
    assert not ledger.entries["a2"].executable
    assert ledger.entries["a3"].final_code == "print('ok')\n"


def test_run_benchmark_per_problem_isolation():
    def exploding(problem):
        if problem.id == "a2":
            raise RuntimeError("factory blew up")
        return coder_for(problem)

    config = BenchConfig(make_coder=exploding, runner=scripted_runner,
                         duo_limits=DuoLimits(max_rounds=2))
    ledger = run_benchmark(mini_registry(), "duo", config)
    assert not ledger.entries["a2"].executable
    assert "run failed" in ledger.entries["a2"].verdict.notes
    assert ledger.entries["a1"].executable
    assert ledger.entries["a3"].executable


def test_run_benchmark_resume_skips_done(tmp_path):
    path = tmp_path / "ledger.jsonl"
    config = BenchConfig(make_coder=coder_for, runner=scripted_runner,
                         duo_limits=DuoLimits(max_rounds=2))
    first = run_benchmark(mini_registry(), "duo", config, framework_id="f1",
                          resume_from=path)

    def must_not_run(problem):
        raise AssertionError("already-completed problem reran")

    config2 = BenchConfig(make_coder=must_not_run, runner=scripted_runner)
    second = run_benchmark(mini_registry(), "duo", config2, framework_id="f1",
                           resume_from=path)
    assert {p: e.executable for p, e in second.entries.items()} == \
        {p: e.executable for p, e in first.entries.items()}


def test_run_benchmark_unknown_strategy():
    with pytest.raises(ValueError):
        run_benchmark(mini_registry(), "solo", BenchConfig())


def test_ledger_save_load_round_trip(tmp_path):
    config = BenchConfig(make_coder=coder_for, runner=scripted_runner,
                         duo_limits=DuoLimits(max_rounds=2))
    ledger = run_benchmark(mini_registry(), "duo", config, framework_id="f1")
    ledger.entries["a1"].verdict = grade(ledger.entries["a1"],
                                         manual=Correctness.YES)
    path = tmp_path / "ledger.jsonl"
    ledger.save(path)
    loaded = RunLedger.load(path)
    assert loaded.framework_id == "f1"
    assert loaded.entries["a1"].verdict.correct is Correctness.YES
    assert loaded.entries["a2"].to_dict() == ledger.entries["a2"].to_dict()


# --- reporting ---

def graded_ledger(correct_ids, ungraded_ids=()):
    registry = load_registry()
    ledger = RunLedger(framework_id="f1")
    for p in registry:
        e = LedgerEntry(problem_id=p.id, framework_id="f1", executable=True)
        if p.id in ungraded_ids:
            e.verdict = None
        else:
            e.verdict = grade(
                e, manual=Correctness.YES if p.id in correct_ids
                else Correctness.NO)
        ledger.entries[p.id] = e
    return ledger, registry


def test_accuracy_report_all_correct():
    ledger, registry = graded_ledger({p.id for p in load_registry()})
    report = accuracy_report(ledger, registry)
    assert report.overall == (39, 39, "100.00")
    assert report.ungraded == []


def test_accuracy_report_ungraded_counts_incorrect():
    all_ids = {p.id for p in load_registry()}
    ledger, registry = graded_ledger(all_ids, ungraded_ids={"fm_q1"})
    report = accuracy_report(ledger, registry)
    assert report.overall == (38, 39, percent_str(38, 39))
    assert report.ungraded == ["fm_q1"]


def test_emit_report_files(tmp_path):
    ledger, registry = graded_ledger({p.id for p in load_registry()
                                      if p.physics is Physics.FLUID})
    report = accuracy_report(ledger, registry)
    emit_report_files(report, tmp_path)
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["overall"]["correct"] == 15
    bars = json.loads((tmp_path / "plot_physics.json").read_text())
    fluid = next(b for b in bars if b["label"] == "fluid")
    assert fluid == {"label": "fluid", "correct": 15, "total": 15,
                     "percent": "100.00"}
    assert (tmp_path / "plot_difficulty.json").exists()
