"""Synthetic instruction-tuning dataset pipeline.

Seed corpus ingestion, lexical retrieval context, staged generation
(problem drafts -> geometry variants -> boundary-condition variants ->
code), an execute-filter with a single correction attempt, and
finalization into instruction/input/output records. Also the k-fold
splitter used for validation.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable

from .chat import CodeBlock, PromptContext
from .gateway import complete
from .sandbox import ExecutionReport, SandboxConfig, execute

DEFAULT_RETRIEVAL_K = 4
DRAFT_MARKER = re.compile(r"^### PROBLEM\s+(\d+)\s*(?:\[([^\]]*)\])?\s*$", re.MULTILINE)
VARIANT_MARKER = re.compile(r"^### VARIANT\s+(\d+)\s*$", re.MULTILINE)
INSTRUCTION_MARKER = re.compile(
    r"### INSTRUCTION\s*\n(.*?)\n### INPUT\s*\n(.*)", re.DOTALL
)


class ForgeError(Exception):
    pass


class ShortOutputError(ForgeError):
    """Endpoint returned fewer parseable items than requested, twice."""


class NoCodeBlockError(ForgeError):
    """Code generation produced prose only, twice."""


class MalformedGenerationError(ForgeError):
    """Instruction/input generation missed a required field, twice."""


class KTooLargeError(ForgeError):
    pass


class PhysicsTag(str, Enum):
    SOLID = "solid"
    FLUID = "fluid"
    MULTIPHYSICS = "multiphysics"
    HEAT = "heat"
    FUNDAMENTALS = "fundamentals"
    OTHER = "other"


@dataclass(frozen=True)
class SeedEntry:
    entry_id: int
    instruction: str
    input: str
    output: str
    source_tag: str = ""
    physics_tag: PhysicsTag = PhysicsTag.OTHER


@dataclass
class SeedCorpus:
    entries: list[SeedEntry]
    warnings: list[str] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class AlpacaRecord:
    instruction: str
    input: str
    output: str

    def to_json(self) -> str:
        # Exactly the three fields, in this key order.
        return json.dumps(
            {"instruction": self.instruction, "input": self.input, "output": self.output},
            ensure_ascii=False,
        )


@dataclass(frozen=True)
class ProblemDraft:
    problem_id: str
    family: str
    statement: str


@dataclass(frozen=True)
class VariantSpec:
    problem_id: str
    geometry_id: str | None
    bc_id: str | None
    statement: str

    @property
    def lineage(self) -> str:
        parts = [self.problem_id]
        if self.geometry_id:
            parts.append(self.geometry_id)
        if self.bc_id:
            parts.append(self.bc_id)
        return "/".join(parts)


class VetStatus(str, Enum):
    UNVETTED = "unvetted"
    PASSED = "passed"
    CORRECTED_PASSED = "corrected-passed"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class CodeCandidate:
    lineage: str
    statement: str
    source: str
    vet_status: VetStatus = VetStatus.UNVETTED
    attempts: int = 0
    reports: tuple[ExecutionReport, ...] = ()

    def __post_init__(self) -> None:
        if self.attempts > 2:
            raise ValueError("a candidate is never executed more than twice")
        if self.vet_status is VetStatus.CORRECTED_PASSED:
            assert len(self.reports) == 2
            assert not self.reports[0].success and self.reports[1].success
        if self.vet_status is VetStatus.DISCARDED:
            assert len(self.reports) == 2 and not any(r.success for r in self.reports)


@dataclass(frozen=True)
class PipelineConfig:
    n_problems: int = 7
    y_geometry: int = 10
    z_boundary: int = 10
    retrieval_k: int = DEFAULT_RETRIEVAL_K
    rng_seed: int = 0
    work_dir: str = "forge-work"
    sandbox: SandboxConfig | None = None

    def __post_init__(self) -> None:
        if min(self.n_problems, self.y_geometry, self.z_boundary) < 1:
            raise ValueError("stage counts must all be >= 1")

    @property
    def candidate_count(self) -> int:
        return self.n_problems * self.y_geometry * self.z_boundary


@dataclass
class DatasetManifest:
    drafts: int = 0
    variants: int = 0
    candidates: int = 0
    passed: int = 0
    corrected: int = 0
    discarded: int = 0
    records: int = 0
    seed_records: int = 0
    records_path: str = ""
    rng_seed: int = 0
    stage_seconds: dict[str, float] = field(default_factory=dict)

    @property
    def total_records(self) -> int:
        return self.seed_records + self.records

    def check(self) -> None:
        assert self.records == self.passed + self.corrected
        assert self.candidates == self.passed + self.corrected + self.discarded

    def to_dict(self) -> dict:
        return {
            "drafts": self.drafts,
            "variants": self.variants,
            "candidates": self.candidates,
            "passed": self.passed,
            "corrected": self.corrected,
            "discarded": self.discarded,
            "records": self.records,
            "seed_records": self.seed_records,
            "total_records": self.total_records,
            "records_path": self.records_path,
            "rng_seed": self.rng_seed,
            "stage_seconds": self.stage_seconds,
        }


def _normalize_program(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.strip().splitlines())


def ingest_seed(paths: list[str | Path]) -> SeedCorpus:
    """Load instruction/input/output triples from JSON or JSONL files.

    Duplicate outputs (identical normalized program text) collapse to
    one entry with a warning; malformed records are reported per file
    and skipped.
    """
    corpus = SeedCorpus(entries=[])
    seen_outputs: dict[str, int] = {}
    next_id = 0
    for path in paths:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
            if text.lstrip().startswith("["):
                rows = json.loads(text)
            else:
                rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        except (OSError, json.JSONDecodeError) as exc:
            corpus.malformed.append(f"{path}: unreadable ({exc})")
            continue
        for i, row in enumerate(rows):
            missing = [k for k in ("instruction", "input", "output") if k not in row]
            if missing or not str(row.get("output", "")).strip():
                corpus.malformed.append(f"{path}[{i}]: missing {missing or ['output']}")
                continue
            key = _normalize_program(row["output"])
            if key in seen_outputs:
                corpus.warnings.append(
                    f"{path}[{i}]: duplicate output of entry {seen_outputs[key]}, collapsed"
                )
                continue
            entry = SeedEntry(
                entry_id=next_id,
                instruction=row["instruction"],
                input=row["input"],
                output=row["output"],
                source_tag=row.get("source_tag", str(path.name)),
                physics_tag=PhysicsTag(row.get("physics_tag", "other")),
            )
            seen_outputs[key] = next_id
            corpus.entries.append(entry)
            next_id += 1
    return corpus


_WORD_RE = re.compile(r"[a-z0-9]+")


def retrieve(corpus: SeedCorpus, query: str, k: int) -> list[SeedEntry]:
    """Top-k entries by term-frequency overlap with instruction+input.

    Deterministic: equal scores tie-break by ascending entry id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = _WORD_RE.findall(query.lower())
    scored = []
    for entry in corpus.entries:
        haystack = _WORD_RE.findall((entry.instruction + " " + entry.input).lower())
        counts: dict[str, int] = {}
        for w in haystack:
            counts[w] = counts.get(w, 0) + 1
        score = sum(counts.get(t, 0) for t in terms)
        scored.append((score, entry))
    scored.sort(key=lambda pair: (-pair[0], pair[1].entry_id))
    return [entry for _score, entry in scored[:k]]


def _prompt_template(name: str) -> str:
    return resources.files("femagents").joinpath("prompts", name).read_text(encoding="utf-8")


def _single_turn(system: str, user: str) -> PromptContext:
    return PromptContext(messages=(
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ))


def _context_snippets(corpus: SeedCorpus, query: str, k: int) -> str:
    picks = retrieve(corpus, query, k) if corpus.entries else []
    return "\n\n".join(
        f"[seed {e.entry_id}] {e.instruction}\n{e.output[:800]}" for e in picks
    )


def gen_problem_drafts(endpoint, corpus: SeedCorpus, n: int,
                       retrieval_k: int = DEFAULT_RETRIEVAL_K) -> list[ProblemDraft]:
    """Ask the problem-gen endpoint for n drafts, each tagged with a
    PDE family; one retry on short output."""
    if n < 1:
        raise ValueError("n must be >= 1")
    template = _prompt_template("problem_gen.txt")
    context_block = _context_snippets(corpus, "finite element problem", retrieval_k)
    user = template.format(n=n, context=context_block)
    for attempt in range(2):
        result = complete(endpoint, _single_turn(
            "You design well-posed PDE problems for finite element solvers.", user))
        drafts = _parse_drafts(result.content)
        if len(drafts) >= n:
            return drafts[:n]
    raise ShortOutputError(f"asked for {n} drafts, got {len(drafts)}")


def _parse_drafts(content: str) -> list[ProblemDraft]:
    matches = list(DRAFT_MARKER.finditer(content))
    drafts = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(content)
        statement = content[m.end():end].strip()
        if statement:
            drafts.append(ProblemDraft(
                problem_id=f"p{int(m.group(1)):02d}",
                family=(m.group(2) or "unspecified").strip(),
                statement=statement,
            ))
    return drafts


def gen_variants(endpoint, parent: ProblemDraft | VariantSpec, axis: str,
                 count: int) -> list[VariantSpec]:
    """Generate geometry or boundary-condition variants of a parent
    statement; one retry on short output."""
    if axis not in ("geometry", "boundary"):
        raise ValueError("axis must be geometry or boundary")
    if count < 1:
        raise ValueError("count must be >= 1")
    template = _prompt_template(
        "variant_geometry.txt" if axis == "geometry" else "variant_boundary.txt"
    )
    statement = parent.statement
    user = template.format(count=count, statement=statement)
    for attempt in range(2):
        result = complete(endpoint, _single_turn(
            "You produce systematic variants of PDE problem statements.", user))
        bodies = _parse_variants(result.content)
        if len(bodies) >= count:
            break
    else:
        raise ShortOutputError(f"asked for {count} variants, got {len(bodies)}")
    variants = []
    for i, body in enumerate(bodies[:count], start=1):
        if axis == "geometry":
            problem_id = parent.problem_id if isinstance(parent, ProblemDraft) else parent.problem_id
            variants.append(VariantSpec(problem_id=problem_id, geometry_id=f"g{i:02d}",
                                        bc_id=None, statement=body))
        else:
            assert isinstance(parent, VariantSpec)
            variants.append(VariantSpec(problem_id=parent.problem_id,
                                        geometry_id=parent.geometry_id,
                                        bc_id=f"b{i:02d}", statement=body))
    return variants


def _parse_variants(content: str) -> list[str]:
    matches = list(VARIANT_MARKER.finditer(content))
    bodies = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(content)
        body = content[m.end():end].strip()
        if body:
            bodies.append(body)
    return bodies


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def synthesize_code(endpoint, variant: VariantSpec) -> CodeCandidate:
    """One code-gen completion per fully resolved variant; the fenced
    script becomes an unvetted candidate."""
    if variant.geometry_id is None or variant.bc_id is None:
        raise ValueError("variant must have both axes resolved")
    template = _prompt_template("code_gen.txt")
    user = template.format(statement=variant.statement)
    for attempt in range(2):
        result = complete(endpoint, _single_turn(
            "You write complete, runnable finite element scripts.", user))
        m = _FENCE_RE.search(result.content)
        if m and m.group(1).strip():
            return CodeCandidate(lineage=variant.lineage, statement=variant.statement,
                                 source=m.group(1))
        user = "Reply with the complete script in a fenced code block.\n\n" + user
    raise NoCodeBlockError(f"no code block for {variant.lineage} after re-ask")


def vet_candidate(
    candidate: CodeCandidate,
    sandbox: SandboxConfig | None,
    correction_endpoint,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
) -> CodeCandidate:
    """Execute once; on failure, one correction completion and one
    re-execution; a second failure discards the candidate."""
    if candidate.vet_status is not VetStatus.UNVETTED:
        raise ValueError("candidate already vetted")
    block = CodeBlock(index=0, language_tag="python", source=candidate.source)
    first = runner(block, sandbox)
    if first.success:
        return replace(candidate, vet_status=VetStatus.PASSED, attempts=1,
                       reports=(first,))
    template = _prompt_template("correction.txt")
    user = template.format(source=candidate.source,
                           error=first.stderr[-4000:] or first.stdout[-4000:])
    result = complete(correction_endpoint, _single_turn(
        "You fix finite element scripts that failed to execute.", user))
    m = _FENCE_RE.search(result.content)
    corrected_source = m.group(1) if m and m.group(1).strip() else candidate.source
    second = runner(CodeBlock(index=0, language_tag="python", source=corrected_source),
                    sandbox)
    if second.success:
        return replace(candidate, source=corrected_source,
                       vet_status=VetStatus.CORRECTED_PASSED, attempts=2,
                       reports=(first, second))
    return replace(candidate, vet_status=VetStatus.DISCARDED, attempts=2,
                   reports=(first, second))


def finalize_record(endpoint, candidate: CodeCandidate) -> AlpacaRecord:
    """Generate instruction and input fields for a vetted script."""
    if candidate.vet_status not in (VetStatus.PASSED, VetStatus.CORRECTED_PASSED):
        raise ValueError("only passed or corrected-passed candidates become records")
    template = _prompt_template("instruction_gen.txt")
    user = template.format(statement=candidate.statement, source=candidate.source)
    for attempt in range(2):
        result = complete(endpoint, _single_turn(
            "You write concise instruction/input pairs for training records.", user))
        m = INSTRUCTION_MARKER.search(result.content)
        if m and m.group(1).strip():
            return AlpacaRecord(instruction=m.group(1).strip(),
                                input=m.group(2).strip(),
                                output=candidate.source)
    raise MalformedGenerationError(f"instruction generation failed for {candidate.lineage}")


def run_pipeline(
    config: PipelineConfig,
    stage_endpoints: dict,
    seed_corpus: SeedCorpus | None = None,
    runner: Callable[[CodeBlock, SandboxConfig], ExecutionReport] = execute,
) -> DatasetManifest:
    """Run every stage in order, checkpointing to the work directory.

    Stage endpoints: problem-gen, variant-gen, code-gen, correction,
    instruction-gen. Individual candidate failures never abort the
    pipeline; a re-run resumes from the last completed stage.
    """
    required = {"problem-gen", "variant-gen", "code-gen", "correction", "instruction-gen"}
    missing = required - set(stage_endpoints)
    if missing:
        raise ForgeError(f"missing stage endpoints: {sorted(missing)}")
    work = Path(config.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    corpus = seed_corpus or SeedCorpus(entries=[])
    manifest = DatasetManifest(rng_seed=config.rng_seed,
                               seed_records=len(corpus.entries))

    def _timed(name: str, fn):
        start = time.monotonic()
        result = fn()
        manifest.stage_seconds[name] = round(time.monotonic() - start, 3)
        return result

    # Stage 1: problem drafts.
    drafts_path = work / "drafts.json"
    if drafts_path.exists():
        drafts = [ProblemDraft(**d) for d in json.loads(drafts_path.read_text())]
    else:
        drafts = _timed("drafts", lambda: gen_problem_drafts(
            stage_endpoints["problem-gen"], corpus, config.n_problems,
            config.retrieval_k))
        drafts_path.write_text(json.dumps([d.__dict__ for d in drafts]))
    manifest.drafts = len(drafts)

    # Stage 2: geometry then boundary variants.
    variants_path = work / "variants.json"
    if variants_path.exists():
        leaves = [VariantSpec(**v) for v in json.loads(variants_path.read_text())]
    else:
        def _expand():
            out = []
            for draft in drafts:
                geo = gen_variants(stage_endpoints["variant-gen"], draft,
                                   "geometry", config.y_geometry)
                for g in geo:
                    out.extend(gen_variants(stage_endpoints["variant-gen"], g,
                                            "boundary", config.z_boundary))
            return out
        leaves = _timed("variants", _expand)
        variants_path.write_text(json.dumps([v.__dict__ for v in leaves]))
    manifest.variants = len(leaves)

    # Dedup statements by normalized hash before code-gen.
    seen_hashes: set[str] = set()
    unique_leaves = []
    for leaf in leaves:
        digest = hashlib.sha256(_normalize_program(leaf.statement).encode()).hexdigest()
        if digest not in seen_hashes:
            seen_hashes.add(digest)
            unique_leaves.append(leaf)

    # Stage 3: code generation, resumable per lineage.
    candidates_path = work / "candidates.jsonl"
    existing: dict[str, CodeCandidate] = {}
    if candidates_path.exists():
        for line in candidates_path.read_text().splitlines():
            row = json.loads(line)
            existing[row["lineage"]] = CodeCandidate(
                lineage=row["lineage"], statement=row["statement"], source=row["source"])
    with candidates_path.open("a", encoding="utf-8") as fh:
        def _codegen():
            out = []
            for leaf in unique_leaves:
                if leaf.lineage in existing:
                    out.append(existing[leaf.lineage])
                    continue
                try:
                    cand = synthesize_code(stage_endpoints["code-gen"], leaf)
                except ForgeError:
                    continue
                fh.write(json.dumps({"lineage": cand.lineage,
                                     "statement": cand.statement,
                                     "source": cand.source}) + "\n")
                out.append(cand)
            return out
        candidates = _timed("code-gen", _codegen)
    manifest.candidates = len(candidates)

    # Stage 4: execute-filter with one-shot correction.
    records_path = work / "records.jsonl"
    manifest.records_path = str(records_path)

    def _vet_and_finalize():
        with records_path.open("w", encoding="utf-8") as out:
            for cand in candidates:
                vetted = vet_candidate(cand, config.sandbox,
                                       stage_endpoints["correction"], runner)
                if vetted.vet_status is VetStatus.PASSED:
                    manifest.passed += 1
                elif vetted.vet_status is VetStatus.CORRECTED_PASSED:
                    manifest.corrected += 1
                else:
                    manifest.discarded += 1
                    continue
                try:
                    record = finalize_record(stage_endpoints["instruction-gen"], vetted)
                except ForgeError:
                    # A record that cannot be finalized is lost the same
                    # way a discarded candidate is.
                    manifest.discarded += 1
                    if vetted.vet_status is VetStatus.PASSED:
                        manifest.passed -= 1
                    else:
                        manifest.corrected -= 1
                    continue
                out.write(record.to_json() + "\n")
                manifest.records += 1
    _timed("vet-finalize", _vet_and_finalize)

    manifest.check()
    (work / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2))
    return manifest


def kfold_split(dataset: list, k: int, rng_seed: int) -> list[list]:
    """Disjoint folds partitioning the dataset, sizes differing by at
    most one, deterministic for a given seed."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(dataset) < k:
        raise KTooLargeError(f"k={k} exceeds dataset size {len(dataset)}")
    indices = list(range(len(dataset)))
    random.Random(rng_seed).shuffle(indices)
    folds: list[list] = [[] for _ in range(k)]
    for pos, idx in enumerate(indices):
        folds[pos % k].append(dataset[idx])
    return folds


def write_records(records: list[AlpacaRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def read_records(path: str | Path) -> list[AlpacaRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            row = json.loads(line)
            records.append(AlpacaRecord(row["instruction"], row["input"], row["output"]))
    return records
