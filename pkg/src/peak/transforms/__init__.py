"""Natural-language transformations: loading, prompting, splicing, retrying.

A transformation is a bundle on disk: `manifest.json` plus one prompt file
per region call, with hand-written snippets shared across the catalog. Each
pass groups up to three region calls executed back to back; every call asks
the client for the full replacement text of exactly one region and splices
the last fenced code block of the response. New tuning parameters come from
the manifest, never from model output; they are registered in the spec
before the first pass so the model only has to use the given placeholder
names.

Validation gates every pass that is not marked intermediate_ok (and always
the final pass): sampled output comparison against the workflow's reference
store. Compile and reference failures feed the compiler/validator message
back into a bounded per-pass retry loop.
"""

from __future__ import annotations

import json
import re
import statistics
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..context import KernelContext, check_placeholder_closure, replace_region
from ..errors import (
    BadPlaceholder,
    ExtractionFailure,
    ManifestError,
    MissingSnippet,
    OrphanDeclaration,
    OrphanPlaceholder,
    TransformationNotApplicable,
    UnknownTransformation,
)
from ..speclang import ExplicitSet, Num, TuningDecl
from ..validation import ReferenceStore, ValidationReport, validate
from .llm import CallMeta, LlmClient, LlmRequest, LlmResponse, region_hash

DATA_ROOT = resources.files("peak") / "data"
CATALOG_ROOT = DATA_ROOT / "transformations"
FIXTURES_ROOT = DATA_ROOT / "fixtures"

REGION_KINDS = ("device", "host", "macros")
FEEDBACK_LIMIT = 4000

_KNOWN_SLOTS = ("device_code", "host_code", "macros", "spec", "backend", "feedback")
_SLOT_RE = re.compile(r"\{\{([^{}]+)\}\}")
_FENCE_RE = re.compile(r"^```[^\n]*\n(.*?)^```[ \t]*$", re.MULTILINE | re.DOTALL)


@dataclass(frozen=True)
class Snippet:
    id: str
    region: str
    text: str


@dataclass(frozen=True)
class TransformPass:
    """One region call; passes sharing an index run back to back."""

    index: int
    region: str
    prompt_template: str
    inserts: tuple[str, ...] = ()
    intermediate_ok: bool = False


@dataclass(frozen=True)
class NaturalTransformation:
    name: str
    description: str
    passes: tuple[TransformPass, ...]
    new_tuning: tuple[TuningDecl, ...] = ()
    backend_only: tuple[str, ...] | None = None

    @property
    def pass_count(self) -> int:
        return len({p.index for p in self.passes})

    @property
    def llm_calls(self) -> int:
        return len(self.passes)

    def applicable_to(self, backend_id: str) -> bool:
        return self.backend_only is None or backend_id in self.backend_only

    def summary(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "passes": self.pass_count,
            "llm_calls": self.llm_calls,
            "new_tuning": [d.name for d in self.new_tuning],
            "backend_only": list(self.backend_only) if self.backend_only else None,
        }


# --- loading -----------------------------------------------------------------

def load_snippets(snippets_dir: Path | None = None) -> dict[str, Snippet]:
    base = Path(str(snippets_dir)) if snippets_dir else CATALOG_ROOT / "snippets"
    index_path = base / "index.json"
    try:
        index = json.loads(index_path.read_text())
    except FileNotFoundError:
        return {}
    snippets = {}
    for sid, entry in index.items():
        text = (base / entry["file"]).read_text()
        if "{{" in text:
            raise ManifestError(f"snippet '{sid}' contains template tokens")
        snippets[sid] = Snippet(sid, entry["region"], text)
    return snippets


def load_transformation(
    directory: Path | str, snippets: dict[str, Snippet] | None = None
) -> NaturalTransformation:
    directory = Path(str(directory))
    if snippets is None:
        snippets = load_snippets()
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise UnknownTransformation(f"no transformation at {directory}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"bad manifest in {directory}: {exc}") from exc

    for key in ("name", "description", "passes"):
        if key not in manifest:
            raise ManifestError(f"manifest missing '{key}'")
    if not manifest["passes"]:
        raise ManifestError("a transformation needs at least one pass")

    new_tuning = tuple(
        TuningDecl(entry["name"], ExplicitSet(tuple(Num(int(v)) for v in entry["values"])))
        for entry in manifest.get("new_tuning", [])
    )

    passes: list[TransformPass] = []
    for index, pass_entry in enumerate(manifest["passes"]):
        calls = pass_entry.get("calls", [])
        if not 1 <= len(calls) <= 3:
            raise ManifestError(f"pass {index} must have 1..3 region calls")
        for call in calls:
            region = call.get("region")
            if region not in REGION_KINDS:
                raise ManifestError(f"pass {index} targets unknown region '{region}'")
            prompt_path = directory / call["prompt"]
            try:
                template = prompt_path.read_text()
            except FileNotFoundError:
                raise ManifestError(f"missing prompt file {prompt_path}") from None
            inserts = tuple(call.get("inserts", []))
            for slot in _SLOT_RE.findall(template):
                if slot.startswith("insert:"):
                    if slot.split(":", 1)[1] not in inserts:
                        raise BadPlaceholder(
                            f"{prompt_path.name} uses {{{{{slot}}}}} "
                            "without declaring the insert")
                elif slot not in _KNOWN_SLOTS:
                    raise BadPlaceholder(
                        f"{prompt_path.name} uses unknown placeholder {{{{{slot}}}}}")
            for snippet_id in inserts:
                if snippet_id not in snippets:
                    raise MissingSnippet(
                        f"pass {index} references snippet '{snippet_id}' "
                        "absent from the library")
            passes.append(TransformPass(
                index=index,
                region=region,
                prompt_template=template,
                inserts=inserts,
                intermediate_ok=bool(pass_entry.get("intermediate_ok", False)),
            ))

    return NaturalTransformation(
        name=manifest["name"],
        description=manifest["description"],
        passes=tuple(passes),
        new_tuning=new_tuning,
        backend_only=tuple(manifest["backend_only"]) if manifest.get("backend_only") else None,
    )


def load_catalog(catalog_dir: Path | None = None) -> dict[str, NaturalTransformation]:
    base = catalog_dir if catalog_dir is not None else CATALOG_ROOT
    snippets = load_snippets(Path(str(base)) / "snippets")
    catalog = {}
    for entry in sorted(Path(str(base)).iterdir()):
        if entry.is_dir() and (entry / "manifest.json").exists():
            t = load_transformation(entry, snippets)
            catalog[t.name] = t
    return catalog


# --- prompting ---------------------------------------------------------------------

def assemble_prompt(
    tpass: TransformPass,
    ctx: KernelContext,
    feedback: str = "",
    snippets: dict[str, Snippet] | None = None,
    model_tag: str = "",
) -> LlmRequest:
    from ..speclang import print_spec

    snippets = snippets if snippets is not None else load_snippets()
    system = (
        "You are performing one pass of a kernel optimization workflow. "
        f"Target region: {tpass.region}. "
        "Return exactly one fenced code block containing the full replacement "
        f"text of the {tpass.region} region. Preserve every @TUNE(...) "
        "placeholder you do not intentionally change."
    )
    values = {
        "device_code": ctx.device,
        "host_code": ctx.host,
        "macros": ctx.macros,
        "spec": print_spec(ctx.spec),
        "backend": ctx.backend,
        "feedback": feedback[:FEEDBACK_LIMIT],
    }

    def fill(match: re.Match) -> str:
        slot = match.group(1)
        if slot.startswith("insert:"):
            sid = slot.split(":", 1)[1]
            if sid not in snippets:
                raise MissingSnippet(f"snippet '{sid}' absent from library")
            return snippets[sid].text
        if slot not in values:
            raise BadPlaceholder(f"unknown placeholder {{{{{slot}}}}}")
        return values[slot]

    user = _SLOT_RE.sub(fill, tpass.prompt_template)
    return LlmRequest(system=system, user=user, model_tag=model_tag)


def extract_region_code(response: LlmResponse) -> str:
    """Contents of the LAST fenced code block (scratch blocks come first)."""
    blocks = _FENCE_RE.findall(response.raw_text)
    if not blocks:
        raise ExtractionFailure("response contains no fenced code block")
    return blocks[-1]


# --- application -----------------------------------------------------------------------

@dataclass
class AttemptRecord:
    pass_index: int
    attempt: int
    status: str  # success | compile_failure | reference_failure | extraction_failure
    stderr_excerpt: str = ""

    def to_json(self) -> dict:
        return {
            "pass_index": self.pass_index,
            "attempt": self.attempt,
            "status": self.status,
            "stderr_excerpt": self.stderr_excerpt[:500],
        }


@dataclass
class ApplyOutcome:
    status: str  # success | compile_failure | reference_failure |
    #              extraction_failure | exhausted_retries
    result_ctx: KernelContext | None = None
    attempts: list[AttemptRecord] = field(default_factory=list)
    validation: ValidationReport | None = None

    @property
    def succeeded(self) -> bool:
        return self.status == "success"


def _classify_validation(report: ValidationReport) -> tuple[str, str]:
    counts = report.counts()
    if counts.get("compile_error"):
        stderr = next(
            (r.stderr_excerpt for r in report.records if r.status == "compile_error"), "")
        return "compile_failure", stderr
    return "reference_failure", report.reason


def apply_transformation(
    ctx: KernelContext,
    transformation: NaturalTransformation,
    client: LlmClient,
    refs: ReferenceStore,
    validator_budget: int = 16,
    max_retries: int = 3,
    seed: int = 16,
    snippets: dict[str, Snippet] | None = None,
    parallel_compile: int = 4,
    observer=None,
) -> ApplyOutcome:
    """Run every pass, validating gated passes, retrying failures with
    feedback. `observer(pass_index, region, before_ctx, after_ctx)` is a
    test hook invoked after every successful splice.

    With max_retries=0 the outcome status is the failing attempt's class;
    with retries enabled, a pass that never succeeds yields
    `exhausted_retries` (per-attempt classes stay in the attempts list).
    """
    if not transformation.applicable_to(ctx.backend):
        raise TransformationNotApplicable(
            f"'{transformation.name}' is restricted to backends "
            f"{list(transformation.backend_only or ())}")
    snippets = snippets if snippets is not None else load_snippets()

    work = ctx
    if transformation.new_tuning:
        work = KernelContext(
            device=work.device, host=work.host, macros=work.macros,
            spec=work.spec.with_tuning(list(transformation.new_tuning)),
            backend=work.backend, kernel_name=work.kernel_name, label=work.label)

    groups: dict[int, list[TransformPass]] = {}
    for tpass in transformation.passes:
        groups.setdefault(tpass.index, []).append(tpass)
    last_index = max(groups)

    attempts: list[AttemptRecord] = []
    last_report: ValidationReport | None = None

    for index in sorted(groups):
        group = groups[index]
        base = work
        feedback = ""
        pass_done = False
        failure_class = ""
        for attempt in range(max_retries + 1):
            candidate = base
            failure: tuple[str, str] | None = None
            for tpass in group:
                request = assemble_prompt(tpass, candidate, feedback, snippets)
                meta = CallMeta(
                    transformation=transformation.name,
                    pass_index=index,
                    region=tpass.region,
                    attempt=attempt,
                    input_region_hash=region_hash(candidate.region(tpass.region)),
                )
                response = client.complete(request, meta)
                try:
                    code = extract_region_code(response)
                except ExtractionFailure as exc:
                    failure = ("extraction_failure", str(exc))
                    break
                before = candidate
                try:
                    candidate = replace_region(candidate, tpass.region, code)
                except OrphanPlaceholder as exc:
                    failure = ("compile_failure",
                               f"undeclared tuning placeholder: {exc.message}")
                    break
                if observer is not None:
                    observer(index, tpass.region, before, candidate)

            validated: ValidationReport | None = None
            if failure is None and (index == last_index or not group[0].intermediate_ok):
                try:
                    check_placeholder_closure(candidate)
                except OrphanDeclaration as exc:
                    failure = ("reference_failure", exc.message)
                except OrphanPlaceholder as exc:
                    failure = ("compile_failure", exc.message)
                if failure is None:
                    validated = validate(
                        candidate, refs, validator_budget, seed,
                        parallel_compile=parallel_compile)
                    if not validated.passed:
                        failure = _classify_validation(validated)

            if failure is None:
                attempts.append(AttemptRecord(index, attempt, "success"))
                work = candidate
                if validated is not None:
                    last_report = validated
                pass_done = True
                break

            failure_class, detail = failure
            attempts.append(AttemptRecord(index, attempt, failure_class, detail))
            feedback = detail[:FEEDBACK_LIMIT]

        if not pass_done:
            status = failure_class if max_retries == 0 else "exhausted_retries"
            return ApplyOutcome(status=status, attempts=attempts,
                                validation=last_report)

    return ApplyOutcome(
        status="success", result_ctx=work, attempts=attempts, validation=last_report)


# --- reliability harness ---------------------------------------------------------------

@dataclass
class ReliabilityReport:
    trials: int
    success_rate: float
    compile_failure_rate: float
    reference_failure_rate: float
    extraction_failure_rate: float
    per_trial: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "trials": self.trials,
            "success_rate": self.success_rate,
            "compile_failure_rate": self.compile_failure_rate,
            "reference_failure_rate": self.reference_failure_rate,
            "extraction_failure_rate": self.extraction_failure_rate,
            "per_trial": self.per_trial,
        }


def measure_reliability(
    ctx: KernelContext,
    transformation: NaturalTransformation,
    client: LlmClient,
    refs: ReferenceStore,
    trials: int,
    validator_budget: int = 16,
    seed: int = 16,
    audit_path: Path | str | None = None,
    parallel_compile: int = 4,
) -> ReliabilityReport:
    """One-shot (no retry) application repeated `trials` times.

    Compile errors count as compilation failures; kernels that compile but
    produce wrong output count as reference failures. Extraction failures
    are reported separately, so the three main rates sum to <= 1.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    per_trial: list[dict] = []
    tally = {"success": 0, "compile_failure": 0, "reference_failure": 0,
             "extraction_failure": 0}
    for i in range(trials):
        client.start_trial(i)
        outcome = apply_transformation(
            ctx, transformation, client, refs,
            validator_budget=validator_budget, max_retries=0, seed=seed,
            parallel_compile=parallel_compile)
        tally[outcome.status] = tally.get(outcome.status, 0) + 1
        per_trial.append({
            "trial": i,
            "status": outcome.status,
            "attempts": [a.to_json() for a in outcome.attempts],
        })
    report = ReliabilityReport(
        trials=trials,
        success_rate=tally["success"] / trials,
        compile_failure_rate=tally["compile_failure"] / trials,
        reference_failure_rate=tally["reference_failure"] / trials,
        extraction_failure_rate=tally["extraction_failure"] / trials,
        per_trial=per_trial,
    )
    if audit_path is not None:
        audit_path = Path(audit_path)
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        audit_path.write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    return report
