"""Command-line entry points.

Long-running live sessions go through the HTTP service (`femagents
serve` plus the web console); the batch workflows below run the core
package directly and write their results into the same store layout.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .bench import (
    BenchConfig,
    Correctness,
    RunLedger,
    accuracy_report,
    emit_report_files,
    grade,
    load_registry,
)
from .chat import AgentKind, AgentSpec
from .duo import DuoLimits, run_duo
from .forge import (
    PipelineConfig,
    ingest_seed,
    kfold_split,
    read_records,
    run_pipeline,
)
from .gateway import EndpointConfig, HttpEndpoint
from .lora import verify_properties
from .orchestra import (
    AutoPolicyChannel,
    OrchestraLimits,
    Roster,
    TerminalAdminChannel,
    run_orchestra,
)
from .sandbox import SandboxConfig


def _load_json(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _endpoint_from_config(config: dict, name: str) -> HttpEndpoint:
    spec = config["endpoints"][name]
    return HttpEndpoint(EndpointConfig(**spec))


@click.group()
def main():
    """Agentic finite-element code generation toolkit."""


@main.group()
def duo():
    """Two-agent coder/executor loop."""


@duo.command("run")
@click.option("--problem", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="JSON file with an 'endpoints' map and optional 'sandbox'.")
@click.option("--endpoint", "endpoint_name", required=True)
@click.option("--max-rounds", default=8, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def duo_run(problem, config_path, endpoint_name, max_rounds, out_dir):
    config = _load_json(config_path)
    coder = AgentSpec(
        name="coder",
        kind=AgentKind.ASSISTANT,
        system_prompt=config.get(
            "coder_system_prompt",
            "You write complete, runnable FEniCS scripts and revise them "
            "based on execution feedback. Reply with the full script in a "
            "fenced code block.",
        ),
        endpoint=_endpoint_from_config(config, endpoint_name),
        coordinator_eligible=True,
    )
    sandbox = SandboxConfig(**config.get("sandbox", {"workspace_root": out_dir}))
    outcome, _transcript = run_duo(
        Path(problem).read_text(encoding="utf-8"),
        coder,
        sandbox,
        DuoLimits(max_rounds=max_rounds),
        out_dir=out_dir,
    )
    click.echo(f"status={outcome.status.value} rounds={outcome.rounds_used}")
    sys.exit(0 if outcome.status.value == "executed-clean" else 1)


@main.group()
def orchestra():
    """Coordinator-driven multi-agent framework."""


@orchestra.command("run")
@click.option("--problem", required=True, type=click.Path(exists=True))
@click.option("--roster", "roster_path", required=True, type=click.Path(exists=True),
              help="JSON file mapping role -> endpoint settings.")
@click.option("--headless", is_flag=True,
              help="Auto-exit on the evaluator satisfaction marker instead of prompting.")
@click.option("--out", "out_dir", default="orchestra-out", type=click.Path())
def orchestra_run(problem, roster_path, headless, out_dir):
    config = _load_json(roster_path)

    def agent(name: str) -> AgentSpec:
        spec = config["agents"][name]
        return AgentSpec(
            name=name,
            kind=AgentKind.ASSISTANT,
            system_prompt=spec.get("system_prompt", f"You are the {name}."),
            endpoint=HttpEndpoint(EndpointConfig(**spec["endpoint"])),
            coordinator_eligible=name in ("planner", "formulator", "coder", "evaluator"),
        )

    roster = Roster(
        coordinator=agent("coordinator"),
        planner=agent("planner"),
        formulator=agent("formulator"),
        coder=agent("coder"),
        corrector=agent("corrector"),
        evaluator=agent("evaluator"),
        executor=SandboxConfig(**config.get("sandbox", {"workspace_root": out_dir})),
        admin=AutoPolicyChannel() if headless else TerminalAdminChannel(),
    )
    outcome, _transcript = run_orchestra(
        Path(problem).read_text(encoding="utf-8"),
        roster,
        OrchestraLimits(**config.get("limits", {})),
        out_dir=out_dir,
    )
    click.echo(f"status={outcome.status.value} gates={len(outcome.gate_history)}")


@main.group()
def forge():
    """Synthetic dataset pipeline."""


@forge.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def forge_run(config_path):
    config = _load_json(config_path)
    endpoints = {
        stage: HttpEndpoint(EndpointConfig(**spec))
        for stage, spec in config["stage_endpoints"].items()
    }
    seed = ingest_seed(config.get("seed_paths", []))
    pipeline = PipelineConfig(
        n_problems=config.get("n_problems", 7),
        y_geometry=config.get("y_geometry", 10),
        z_boundary=config.get("z_boundary", 10),
        retrieval_k=config.get("retrieval_k", 4),
        rng_seed=config.get("rng_seed", 0),
        work_dir=config.get("work_dir", "forge-work"),
        sandbox=SandboxConfig(**config["sandbox"]) if "sandbox" in config else None,
    )
    manifest = run_pipeline(pipeline, endpoints, seed)
    click.echo(json.dumps(manifest.to_dict(), indent=2))


@forge.command("resume")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True),
              help="Manifest of an interrupted run; stages re-run from its work dir.")
def forge_resume(manifest_path):
    manifest = _load_json(manifest_path)
    work_dir = str(Path(manifest_path).parent)
    click.echo(
        f"resume: re-run `forge run` with work_dir={work_dir}; completed "
        "stages are picked up from their checkpoint files."
    )


@forge.command("split")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="folds", type=click.Path())
def forge_split(records_path, k, seed, out_dir):
    records = read_records(records_path)
    folds = kfold_split(records, k, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, fold in enumerate(folds):
        with (out / f"fold_{i}.jsonl").open("w", encoding="utf-8") as fh:
            for record in fold:
                fh.write(record.to_json() + "\n")
    click.echo(f"fold sizes: {[len(f) for f in folds]}")


@main.group()
def bench():
    """39-problem evaluation harness."""


@bench.command("census")
@click.option("--registry", "registry_path", default=None, type=click.Path(exists=True))
def bench_census(registry_path):
    problems = load_registry(registry_path)
    click.echo(f"{len(problems)} problems loaded; census OK")


@bench.command("run")
@click.option("--strategy", type=click.Choice(["duo", "orchestra", "baseline"]),
              required=True)
@click.option("--registry", "registry_path", default=None, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="bench-out", type=click.Path())
def bench_run(strategy, registry_path, config_path, out_dir):
    from .bench import run_benchmark

    config = _load_json(config_path)
    registry = load_registry(registry_path)
    sandbox = SandboxConfig(**config.get("sandbox", {"workspace_root": out_dir}))

    def make_coder(problem):
        return AgentSpec(
            name="coder", kind=AgentKind.ASSISTANT,
            system_prompt="You write complete, runnable FEniCS scripts.",
            endpoint=_endpoint_from_config(config, config["coder_endpoint"]),
            coordinator_eligible=True,
        )

    def make_endpoint(problem):
        return _endpoint_from_config(config, config["baseline_endpoint"])

    bench_config = BenchConfig(
        sandbox=sandbox, out_dir=out_dir,
        make_coder=make_coder, make_endpoint=make_endpoint,
    )
    ledger = run_benchmark(registry, strategy, bench_config,
                           resume_from=Path(out_dir) / "ledger.jsonl")
    ledger.save(Path(out_dir) / "ledger.jsonl")
    executable = sum(1 for e in ledger.entries.values() if e.executable)
    click.echo(f"{executable}/{len(ledger.entries)} executable")


@bench.command("grade")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True))
@click.option("--manual", is_flag=True, help="Prompt for manual verdicts.")
@click.option("--references", "references_path", default=None,
              type=click.Path(exists=True),
              help="JSON map problem_id -> {scalar name: reference value}.")
def bench_grade(ledger_path, manual, references_path):
    ledger = RunLedger.load(ledger_path)
    references = _load_json(references_path) if references_path else {}
    for pid in sorted(ledger.entries):
        entry = ledger.entries[pid]
        manual_verdict = None
        if manual and entry.executable:
            answer = click.prompt(f"{pid}: correct? [yes/no/skip]",
                                  default="skip")
            if answer in ("yes", "no"):
                manual_verdict = Correctness(answer)
        entry.verdict = grade(entry, references.get(pid), manual_verdict,
                              confirm_manual=True)
    ledger.save(ledger_path)
    click.echo("graded")


@bench.command("report")
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True))
@click.option("--registry", "registry_path", default=None, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def bench_report(ledger_path, registry_path, out_dir):
    ledger = RunLedger.load(ledger_path)
    registry = load_registry(registry_path)
    report = accuracy_report(ledger, registry)
    emit_report_files(report, out_dir)
    correct, total, percent = report.overall
    click.echo(f"overall: {correct}/{total} = {percent}%")


@main.group()
def lora():
    """Adapter-math property verification."""


@lora.command("verify")
@click.option("--d", default=64, show_default=True)
@click.option("--k", default=48, show_default=True)
@click.option("--r", default=4, show_default=True)
@click.option("--alpha", default=16.0, show_default=True)
@click.option("--trials", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
def lora_verify(d, k, r, alpha, trials, seed):
    results = verify_properties(d, k, r, alpha, trials, seed)
    failed = False
    for name, ok in results.items():
        click.echo(f"{'PASS' if ok else 'FAIL'}  {name}")
        failed |= not ok
    sys.exit(1 if failed else 0)


@main.command("serve")
@click.option("--bind", default="127.0.0.1:8000", show_default=True)
@click.option("--store", "store_dir", required=True, type=click.Path())
def serve(bind, store_dir):
    """Run the HTTP service over a file store."""
    import uvicorn

    from .service import create_app
    from .store import FileStore

    host, _, port = bind.partition(":")
    app = create_app(FileStore(store_dir))
    uvicorn.run(app, host=host, port=int(port or "8000"), log_level="warning")


if __name__ == "__main__":
    main()
