"""Correctness validation against seed-grounded reference outputs.

The seed context is ground truth: its outputs over sampled *input keys*
(scalar values + array sizes, tuning excluded) are recorded once, and every
candidate context is validated by re-running sampled execution parameters
with capture and comparing output buffers under dtype-aware tolerances.
Tuning values never key references, because tuning must affect performance
only; that assumption is itself checked by validating the seed across
distinct tuning values.

Validator plugins (sanitizers, race detectors, ...) hook in per backend and
may append findings; a plugin crash degrades to a warning, never a failed
validation run.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import BatchJob, TimingPolicy, compile_and_run, execute_batch, get_backend
from .context import ContextDigest, KernelContext, digest, save_bundle
from .errors import (
    DuplicatePlugin,
    IncompatibleReference,
    LengthMismatch,
    SeedExecutionFailure,
)
from .speclang import (
    ExecutionParams,
    enumerate_input_keys,
    iter_tuning_space,
    sample_execution_params,
)
from .rng import SplitMix64

_NP_DTYPES = {"f32": np.float32, "f16": np.float16, "i32": np.int32}

# One compile+run per sampled point; timing is irrelevant for validation.
CAPTURE_POLICY = TimingPolicy(warmup_runs=0, measured_runs=1)


@dataclass(frozen=True)
class TolerancePolicy:
    abs_tol: float
    rel_tol: float
    dtype: str
    reduction_dim_hint: int | None = None

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be nonnegative")

    def effective_rel_tol(self) -> float:
        if self.reduction_dim_hint is None:
            return self.rel_tol
        # scale by sqrt(k)/sqrt(64): calibrated for unit-scale k=64 matmul
        return self.rel_tol * math.sqrt(self.reduction_dim_hint) / 8.0


DEFAULT_TOLERANCES: dict[str, TolerancePolicy] = {
    "f32": TolerancePolicy(abs_tol=1e-6, rel_tol=1e-3, dtype="f32"),
    "f16": TolerancePolicy(abs_tol=1e-3, rel_tol=1e-2, dtype="f16"),
    "i32": TolerancePolicy(abs_tol=0.0, rel_tol=0.0, dtype="i32"),
}


@dataclass
class CompareResult:
    match: bool
    worst_error: float
    first_mismatch_index: int | None


def compare_buffers(candidate: bytes, reference: bytes, policy: TolerancePolicy) -> CompareResult:
    """Elementwise |c-r| <= abs_tol + rel_tol*|r|; f16 compared widened."""
    np_dtype = _NP_DTYPES[policy.dtype]
    if len(candidate) != len(reference):
        raise LengthMismatch(
            f"buffer lengths differ: {len(candidate)} vs {len(reference)} bytes")
    cand = np.frombuffer(candidate, dtype=np_dtype)
    ref = np.frombuffer(reference, dtype=np_dtype)
    if policy.dtype == "i32":
        failing = cand != ref
        worst = float(np.max(np.abs(cand.astype(np.int64) - ref.astype(np.int64)), initial=0))
    else:
        cand = cand.astype(np.float32)
        ref = ref.astype(np.float32)
        diff = np.abs(cand - ref)
        thresh = policy.abs_tol + policy.effective_rel_tol() * np.abs(ref)
        failing = ~(diff <= thresh)  # NaN in either side fails
        worst = float(np.max(np.where(np.isnan(diff), np.inf, diff), initial=0.0))
    if not failing.any():
        return CompareResult(True, worst, None)
    return CompareResult(False, worst, int(np.argmax(failing)))


# --- reference store ----------------------------------------------------------

def _key_hash(key: tuple) -> str:
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ReferenceStore:
    seed_digest: ContextDigest
    entries: dict[tuple, dict[str, bytes]] = field(default_factory=dict)
    dtypes: dict[str, str] = field(default_factory=dict)  # array -> elem dtype

    def lookup(self, params: ExecutionParams) -> dict[str, bytes]:
        key = params.input_key()
        if key not in self.entries:
            raise IncompatibleReference(
                f"no reference entry for input key {params.key_label() or '<empty>'}")
        return self.entries[key]

    def save(self, directory: Path | str) -> None:
        directory = Path(directory)
        index: dict = {"seed_digest": self.seed_digest.hash, "dtypes": self.dtypes, "entries": {}}
        for key, arrays in self.entries.items():
            kh = _key_hash(key)
            kdir = directory / "refs" / kh
            kdir.mkdir(parents=True, exist_ok=True)
            rels = {}
            for name, buf in arrays.items():
                (kdir / f"{name}.bin").write_bytes(buf)
                rels[name] = f"refs/{kh}/{name}.bin"
            index["entries"][kh] = {"key": key, "arrays": rels}
        (directory / "index.json").write_text(
            json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Path | str) -> "ReferenceStore":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
        store = cls(seed_digest=ContextDigest(index["seed_digest"]),
                    dtypes=dict(index.get("dtypes", {})))
        for item in index["entries"].values():
            scalars, sizes = item["key"]
            key = (tuple(tuple(p) for p in scalars), tuple(tuple(p) for p in sizes))
            store.entries[key] = {
                name: (directory / rel).read_bytes()
                for name, rel in item["arrays"].items()
            }
        return store


def build_reference(
    seed_ctx: KernelContext,
    budget: int,
    seed: int,
    parallel_compile: int = 4,
    max_tuning_attempts: int = 8,
) -> ReferenceStore:
    """Run the seed across sampled input keys and record its outputs.

    Tuning is pinned to the first valid assignment per key (any valid one is
    equivalent if tuning is performance-only); a key whose first assignments
    all hit the invalid-config sentinel walks further down enumeration order
    before giving up. The seed may not fail: any failure aborts the build.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    spec = seed_ctx.spec
    if not spec.output_arrays:
        raise SeedExecutionFailure("no outputs declared")
    keys = enumerate_input_keys(spec)
    if not keys:
        raise SeedExecutionFailure("specification has no valid execution parameters")
    if budget < len(keys):
        picked = sorted(SplitMix64(seed).sample_indices(len(keys), budget))
        keys = [keys[i] for i in picked]

    backend = get_backend(seed_ctx.backend)
    store = ReferenceStore(
        seed_digest=digest(seed_ctx),
        dtypes={a.name: a.elem_dtype for a in spec.output_arrays})
    for entry in keys:
        candidates = iter_tuning_space(spec, entry)
        result = None
        for _ in range(max_tuning_attempts):
            params = next(candidates, None)
            if params is None:
                break
            result = compile_and_run(
                backend, BatchJob(seed_ctx, params, CAPTURE_POLICY, capture=True))
            if result.status != "invalid_config":
                break
        if result is None or result.status != "ok":
            status = result.status if result else "no valid tuning assignment"
            stderr = (result.stderr_excerpt or "") if result else ""
            raise SeedExecutionFailure(
                f"seed run failed for {entry.key_label()}: {status} {stderr}".strip())
        store.entries[entry.input_key()] = dict(result.outputs)
    return store


# --- validator plugins -----------------------------------------------------------

@dataclass
class PluginFinding:
    plugin_id: str
    severity: str  # 'info' | 'warning' | 'error'
    message: str


class ValidatorPlugin:
    """In-process plugin: run(bundle_dir, params_list, artifact) -> findings."""

    def __init__(self, plugin_id: str, runner, backends: list[str] | None = None):
        self.id = plugin_id
        self.runner = runner
        self.backends = backends

    def supports(self, backend_id: str) -> bool:
        return self.backends is None or backend_id in self.backends

    def run(self, bundle_dir: Path, params: list[ExecutionParams],
            artifact: Path | None) -> list[PluginFinding]:
        return self.runner(bundle_dir, params, artifact)


class CommandValidatorPlugin(ValidatorPlugin):
    """External tool described by a manifest: command template + finding regexes."""

    def __init__(self, plugin_id: str, command_template: str,
                 finding_patterns: list[dict], backends: list[str] | None = None):
        super().__init__(plugin_id, None, backends)
        self.command_template = command_template
        self.finding_patterns = [
            (re.compile(p["pattern"]), p.get("severity", "warning"))
            for p in finding_patterns
        ]

    def run(self, bundle_dir, params, artifact):
        command = (self.command_template
                   .replace("{{bundle}}", str(bundle_dir))
                   .replace("{{executable}}", str(artifact or "")))
        proc = subprocess.run(
            shlex.split(command), capture_output=True, text=True, timeout=300,
            input=json.dumps([p.to_json() for p in params]))
        findings = []
        for line in (proc.stdout + "\n" + proc.stderr).splitlines():
            for pattern, severity in self.finding_patterns:
                if pattern.search(line):
                    findings.append(PluginFinding(self.id, severity, line.strip()))
        if proc.returncode != 0 and not findings:
            raise RuntimeError(f"plugin exited {proc.returncode}")
        return findings

    @classmethod
    def from_manifest(cls, path: Path | str) -> "CommandValidatorPlugin":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["id"], obj["command_template"],
                   obj.get("finding_patterns", []), obj.get("backends"))


_plugin_registry: dict[str, ValidatorPlugin] = {}
_plugin_lock = threading.Lock()


def register_validator_plugin(plugin: ValidatorPlugin) -> None:
    with _plugin_lock:
        if plugin.id in _plugin_registry:
            raise DuplicatePlugin(f"validator plugin '{plugin.id}' already registered")
        _plugin_registry[plugin.id] = plugin


def clear_validator_plugins() -> None:
    with _plugin_lock:
        _plugin_registry.clear()


def registered_validator_plugins() -> list[ValidatorPlugin]:
    with _plugin_lock:
        return list(_plugin_registry.values())


# --- validation ---------------------------------------------------------------------

@dataclass
class SampleRecord:
    params: ExecutionParams
    status: str  # match | mismatch | invalid_config | runtime_error | compile_error
    worst_error: float = 0.0
    first_mismatch_index: int | None = None
    mismatched_array: str | None = None
    stderr_excerpt: str = ""

    def to_json(self) -> dict:
        return {
            "params": self.params.to_json(),
            "status": self.status,
            "worst_error": self.worst_error,
            "first_mismatch_index": self.first_mismatch_index,
            "mismatched_array": self.mismatched_array,
        }


@dataclass
class ValidationReport:
    verdict: str  # 'pass' | 'fail'
    sampled: int
    records: list[SampleRecord] = field(default_factory=list)
    plugin_findings: list[PluginFinding] = field(default_factory=list)
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.status] = out.get(r.status, 0) + 1
        return out

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "sampled": self.sampled,
            "counts": self.counts(),
            "reason": self.reason,
            "records": [r.to_json() for r in self.records],
            "plugin_findings": [
                {"plugin_id": f.plugin_id, "severity": f.severity, "message": f.message}
                for f in self.plugin_findings
            ],
        }


def validate(
    ctx: KernelContext,
    refs: ReferenceStore,
    budget: int,
    seed: int,
    policies: dict[str, TolerancePolicy] | None = None,
    plugins: list[ValidatorPlugin] | None = None,
    parallel_compile: int = 4,
) -> ValidationReport:
    """Sampled output comparison of `ctx` against the reference store."""
    policies = {**DEFAULT_TOLERANCES, **(policies or {})}
    spec = ctx.spec
    samples = sample_execution_params(spec, budget, seed)
    for params in samples:
        refs.lookup(params)  # raises IncompatibleReference before any compile

    jobs = [BatchJob(ctx, p, CAPTURE_POLICY, capture=True) for p in samples]
    results = execute_batch(jobs, parallel_compile=parallel_compile)

    records: list[SampleRecord] = []
    for params, result in zip(samples, results):
        if result.status == "invalid_config":
            records.append(SampleRecord(params, "invalid_config"))
            continue
        if result.status == "compile_error":
            records.append(SampleRecord(
                params, "compile_error", stderr_excerpt=result.stderr_excerpt))
            continue
        if result.status != "ok":
            records.append(SampleRecord(
                params, "runtime_error", stderr_excerpt=result.stderr_excerpt))
            continue
        expected = refs.lookup(params)
        record = SampleRecord(params, "match")
        for decl in spec.output_arrays:
            cmp = compare_buffers(
                result.outputs[decl.name], expected[decl.name],
                policies[decl.elem_dtype])
            record.worst_error = max(record.worst_error, cmp.worst_error)
            if not cmp.match and record.status == "match":
                record.status = "mismatch"
                record.first_mismatch_index = cmp.first_mismatch_index
                record.mismatched_array = decl.name
        records.append(record)

    findings: list[PluginFinding] = []
    active = plugins if plugins is not None else registered_validator_plugins()
    active = [p for p in active if p.supports(ctx.backend)]
    if active:
        with tempfile.TemporaryDirectory(prefix="peak-validate-") as tmp:
            bundle_dir = save_bundle(ctx, Path(tmp) / "bundle")
            artifact = _plugin_artifact(ctx, samples, Path(tmp))
            for plugin in active:
                try:
                    findings.extend(plugin.run(bundle_dir, samples, artifact))
                except Exception as exc:  # crash isolation, never a validate crash
                    findings.append(PluginFinding(
                        plugin.id, "warning", f"plugin crashed: {exc}"))

    valid = [r for r in records if r.status not in ("invalid_config",)]
    reason = ""
    if not records:
        verdict, reason = "fail", "no samples"
    elif not valid:
        verdict, reason = "fail", "no valid samples"
    elif any(r.status != "match" for r in valid):
        verdict = "fail"
        bad = next(r for r in valid if r.status != "match")
        reason = f"{bad.status} at {bad.params.key_label()}"
        if bad.status == "mismatch":
            reason += (f" array {bad.mismatched_array}"
                       f" index {bad.first_mismatch_index}"
                       f" worst_error {bad.worst_error:.3g}")
    elif any(f.severity == "error" for f in findings):
        verdict = "fail"
        reason = next(f.message for f in findings if f.severity == "error")
    else:
        verdict = "pass"
    return ValidationReport(verdict, len(samples), records, findings, reason)


def _plugin_artifact(ctx, samples, tmpdir: Path) -> Path | None:
    """One representative compiled artifact for plugins to inspect."""
    from .backends import compile_sources

    backend = get_backend(ctx.backend)
    for params in samples:
        try:
            driver = backend.generate_driver(
                ctx, params, CAPTURE_POLICY, capture_outputs=False,
                capture_dir=tmpdir)
            return compile_sources(
                backend.descriptor,
                {"driver": driver, "device": ctx.device,
                 "host": ctx.host, "macros": ctx.macros},
                workdir=tmpdir / "plugin-build")
        except Exception:
            continue
    return None
