from __future__ import annotations

import json

from click.testing import CliRunner

from femagents.cli import main
from femagents.forge import AlpacaRecord, write_records


def invoke(*args, **kw):
    return CliRunner().invoke(main, list(args), **kw)


def test_command_tree_exists():
    result = invoke("--help")
    assert result.exit_code == 0
    for group in ("duo", "orchestra", "forge", "bench", "lora", "serve"):
        assert group in result.output


def test_subcommands_registered():
    for args, expected in [
        (("duo", "--help"), "run"),
        (("orchestra", "--help"), "run"),
        (("forge", "--help"), "split"),
        (("bench", "--help"), "grade"),
        (("lora", "--help"), "verify"),
    ]:
        result = invoke(*args)
        assert result.exit_code == 0
        assert expected in result.output


def test_bench_census():
    result = invoke("bench", "census")
    assert result.exit_code == 0
    assert "39 problems loaded" in result.output


def test_lora_verify_pass_fail_table():
    result = invoke("lora", "verify", "--d", "16", "--k", "12", "--r", "2",
                    "--trials", "10")
    assert result.exit_code == 0
    lines = [l for l in result.output.splitlines() if l.startswith("PASS")]
    assert len(lines) == 5


def test_forge_split_writes_folds(tmp_path):
    records = [AlpacaRecord(f"t{i}", "", f"print({i})") for i in range(23)]
    records_path = tmp_path / "records.jsonl"
    write_records(records, records_path)
    out = tmp_path / "folds"
    result = invoke("forge", "split", "--records", str(records_path),
                    "--k", "5", "--out", str(out))
    assert result.exit_code == 0
    sizes = sorted(len(p.read_text().splitlines())
                   for p in out.glob("fold_*.jsonl"))
    assert sizes == [4, 4, 5, 5, 5]


def test_bench_report_from_ledger(tmp_path):
    from femagents.bench import (
        Correctness,
        LedgerEntry,
        RunLedger,
        grade,
        load_registry,
    )

    ledger = RunLedger(framework_id="demo")
    for p in load_registry():
        entry = LedgerEntry(problem_id=p.id, framework_id="demo",
                            executable=True)
        entry.verdict = grade(entry, manual=Correctness.YES)
        ledger.entries[p.id] = entry
    ledger_path = tmp_path / "ledger.jsonl"
    ledger.save(ledger_path)
    out = tmp_path / "report"
    result = invoke("bench", "report", "--ledger", str(ledger_path),
                    "--out", str(out))
    assert result.exit_code == 0
    assert "39/39 = 100.00%" in result.output
    saved = json.loads((out / "report.json").read_text())
    assert saved["overall"]["percent"] == "100.00"
