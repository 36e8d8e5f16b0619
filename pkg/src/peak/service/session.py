"""One optimization session over a workflow root.

A session wires the pieces together: the checkpoint store, the reference
store built at init, the transformation catalog, an LLM client (mock or
live), and the backend runtime. The CLI and the HTTP API are both thin
shells over this class, so their behavior is library behavior.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..backends import TimingPolicy
from ..context import ContextDigest, KernelContext, digest
from ..errors import ConfigError, PeakError, UnknownTransformation
from ..perf import (
    Exhaustive,
    FlopsModel,
    PerfQuery,
    PerfReport,
    RandomSearch,
    Strategy,
    Tuner,
    tuner_sweep,
)
from ..speclang import enumerate_input_keys, parse_spec
from ..store import Checkpoint, DiffResult, Trajectory, WorkflowStore
from ..transforms import (
    ApplyOutcome,
    FIXTURES_ROOT,
    ReliabilityReport,
    apply_transformation,
    load_catalog,
    measure_reliability,
)
from ..transforms.llm import HttpLlmClient, LlmClient, MockLlmClient
from ..validation import (
    DEFAULT_TOLERANCES,
    ReferenceStore,
    TolerancePolicy,
    ValidationReport,
    build_reference,
    validate,
)


@dataclass
class SessionConfig:
    workflow_root: Path
    backend: str = "cpu-ref"
    mock_fixtures: Path | None = None
    llm_url: str = ""
    llm_model: str = ""
    validator_budget: int = 16
    max_retries: int = 3
    reference_budget: int = 16
    seed: int = 16
    keep_top: int = 128
    parallel_compile: int = 4
    warmup_runs: int = 2
    measured_runs: int = 10
    tolerance_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.workflow_root = Path(self.workflow_root)
        if self.mock_fixtures is not None:
            self.mock_fixtures = Path(self.mock_fixtures)
        live = bool(self.llm_url or os.environ.get("PEAK_LLM_URL"))
        if self.mock_fixtures and live:
            raise ConfigError("configure either the mock client or a live "
                              "endpoint, not both")

    @property
    def timing_policy(self) -> TimingPolicy:
        return TimingPolicy(self.warmup_runs, self.measured_runs)

    def tolerances(self) -> dict[str, TolerancePolicy]:
        policies = dict(DEFAULT_TOLERANCES)
        for dtype, entry in self.tolerance_overrides.items():
            policies[dtype] = TolerancePolicy(
                abs_tol=float(entry["abs_tol"]),
                rel_tol=float(entry["rel_tol"]),
                dtype=dtype,
                reduction_dim_hint=entry.get("reduction_dim_hint"),
            )
        return policies

    @classmethod
    def from_file(cls, path: Path | str, **overrides) -> "SessionConfig":
        obj = json.loads(Path(path).read_text())
        obj.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "SessionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "workflow_root" not in obj:
            raise ConfigError("config needs a workflow_root")
        return cls(**obj)


def _guess_kernel_name(device_text: str) -> str:
    m = re.search(r"\bvoid\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(", device_text)
    if not m:
        raise ConfigError(
            "cannot infer the kernel name from the device code; "
            "pass --kernel-name")
    return m.group(1)


class Session:
    def __init__(self, config: SessionConfig, writer: bool = True):
        self.config = config
        self.store = WorkflowStore(config.workflow_root, writer=writer)
        self.catalog = load_catalog()
        self._client: LlmClient | None = None
        self._refs: ReferenceStore | None = None

    def close(self) -> None:
        self.store.close()

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- collaborators -------------------------------------------------

    @property
    def client(self) -> LlmClient:
        if self._client is None:
            if self.config.mock_fixtures:
                self._client = MockLlmClient(self.config.mock_fixtures)
            else:
                self._client = HttpLlmClient(
                    url=self.config.llm_url or None,
                    model_tag=self.config.llm_model or None,
                    audit_path=self.config.workflow_root / "llm_audit.ndjson",
                )
        return self._client

    @property
    def references(self) -> ReferenceStore:
        if self._refs is None:
            path = self.store.references_path
            if not (path / "index.json").exists():
                raise PeakError("no references built yet; run init first")
            self._refs = ReferenceStore.load(path)
        return self._refs

    def transformation(self, name: str):
        try:
            return self.catalog[name]
        except KeyError:
            raise UnknownTransformation(
                f"no transformation named '{name}'; catalog has "
                f"{sorted(self.catalog)}") from None

    # --- verbs ------------------------------------------------------------

    def init(
        self,
        spec_path: Path | str,
        device_path: Path | str,
        host_path: Path | str,
        macros_path: Path | str | None = None,
        kernel_name: str | None = None,
        label: str = "seed",
    ) -> Checkpoint:
        device = Path(device_path).read_text(encoding="utf-8")
        ctx = KernelContext(
            device=device,
            host=Path(host_path).read_text(encoding="utf-8"),
            macros=Path(macros_path).read_text(encoding="utf-8") if macros_path else "",
            spec=parse_spec(Path(spec_path).read_text(encoding="utf-8")),
            backend=self.config.backend,
            kernel_name=kernel_name or _guess_kernel_name(device),
            label=label,
        )
        refs = build_reference(
            ctx, budget=self.config.reference_budget, seed=self.config.seed,
            parallel_compile=self.config.parallel_compile)
        refs.save(self.store.references_path)
        self._refs = refs
        ckpt = self.store.commit(ctx, note="seed context")
        self.store.set_ref("seed", ckpt.id)
        return ckpt

    def transform(
        self, ckpt_ref: str, name: str
    ) -> tuple[ApplyOutcome, Checkpoint | None]:
        parent_id = self.store.resolve(ckpt_ref)
        ctx = self.store.restore(parent_id)
        outcome = apply_transformation(
            ctx, self.transformation(name), self.client, self.references,
            validator_budget=self.config.validator_budget,
            max_retries=self.config.max_retries,
            seed=self.config.seed,
            parallel_compile=self.config.parallel_compile)
        if not outcome.succeeded:
            return outcome, None
        ckpt = self.store.commit(
            outcome.result_ctx,
            parent=parent_id,
            transformation_name=name,
            validation=outcome.validation.to_json() if outcome.validation else None,
        )
        return outcome, ckpt

    def validate_checkpoint(self, ckpt_ref: str, budget: int | None = None) -> ValidationReport:
        ckpt_id = self.store.resolve(ckpt_ref)
        ctx = self.store.restore(ckpt_id)
        report = validate(
            ctx, self.references,
            budget=budget or self.config.validator_budget,
            seed=self.config.seed,
            policies=self.config.tolerances(),
            parallel_compile=self.config.parallel_compile)
        if self.store.is_writer:
            self.store.attach_validation(ckpt_id, report.to_json())
        return report

    def evaluate_checkpoint(
        self,
        ckpt_ref: str,
        strategy: Strategy | None = None,
        keep_top: int | None = None,
        flops_expression: str | None = None,
        confirm_best: int = 0,
    ) -> PerfReport:
        ckpt_id = self.store.resolve(ckpt_ref)
        ctx = self.store.restore(ckpt_id)
        keys = enumerate_input_keys(ctx.spec)
        if not keys:
            raise PeakError("the spec has no valid execution parameters")
        query = PerfQuery(
            input_key=keys[0],
            strategy=strategy or Exhaustive(),
            policy=self.config.timing_policy,
            keep_top=keep_top or self.config.keep_top,
            confirm_best=confirm_best,
        )
        flops = FlopsModel(flops_expression) if flops_expression else None
        from ..perf import evaluate as perf_evaluate
        report = perf_evaluate(
            ctx, query, flops=flops, parallel_compile=self.config.parallel_compile)
        if self.store.is_writer:
            self.store.attach_perf(ckpt_id, report)
        return report

    def sweep(self, ckpt_ref: str, plugin_id: str, budgets: list[int],
              repeats: int) -> dict:
        ctx = self.store.restore(self.store.resolve(ckpt_ref))
        keys = enumerate_input_keys(ctx.spec)
        return tuner_sweep(
            ctx, keys[0], plugin_id, budgets, repeats,
            policy=self.config.timing_policy, seed=self.config.seed,
            parallel_compile=self.config.parallel_compile)

    def reliability(self, ckpt_ref: str, name: str, trials: int) -> ReliabilityReport:
        ctx = self.store.restore(self.store.resolve(ckpt_ref))
        audit_dir = self.config.workflow_root / "reliability"
        audit_dir.mkdir(parents=True, exist_ok=True)
        return measure_reliability(
            ctx, self.transformation(name), self.client, self.references,
            trials=trials,
            validator_budget=self.config.validator_budget,
            seed=self.config.seed,
            audit_path=audit_dir / f"{name}-{trials}trials.json",
            parallel_compile=self.config.parallel_compile)

    def run_sequence(self, names: list[str], start: str = "seed") -> list[Checkpoint]:
        """Apply transformations in order, committing each result; stops at
        the first terminal failure."""
        current = start
        committed: list[Checkpoint] = []
        for name in names:
            outcome, ckpt = self.transform(current, name)
            if ckpt is None:
                raise PeakError(
                    f"transformation '{name}' failed with {outcome.status} "
                    f"after {len(outcome.attempts)} attempts")
            committed.append(ckpt)
            current = ckpt.id.hash
        return committed

    def diff(self, a: str, b: str) -> DiffResult:
        return self.store.diff(self.store.resolve(a), self.store.resolve(b))

    def trajectory(self, tip: str, reference_ms: float | None = None) -> Trajectory:
        return self.store.trajectory(self.store.resolve(tip), reference_ms)

    def tag(self, name: str, ckpt_ref: str) -> ContextDigest:
        ckpt_id = self.store.resolve(ckpt_ref)
        self.store.set_ref(name, ckpt_id)
        return ckpt_id

    def log_tree(self) -> list[dict]:
        """Lineage forest with per-checkpoint summary, topologically ordered."""
        entries = []
        for ckpt in self.store.checkpoints():
            perf = self.store.load_perf(ckpt.id)
            validation = self.store.load_validation(ckpt.id)
            entries.append({
                "id": ckpt.id.hash,
                "short": ckpt.id.short,
                "parent": ckpt.parent.hash if ckpt.parent else None,
                "transformation_name": ckpt.transformation_name,
                "created_at": ckpt.created_at,
                "label": ckpt.label,
                "note": ckpt.note,
                "best_time_ms": perf.best_time_ms if perf else None,
                "best_gflops": perf.best_gflops if perf else None,
                "validation_verdict": validation["verdict"] if validation else None,
            })
        return entries
