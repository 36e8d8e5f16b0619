"""Backend plugin contract and compile/run orchestration.

A backend is described by a JSON manifest (descriptor fields plus a driver
template) and a driver generator that specializes the template for one
(context, execution parameters, timing policy) triple. The CPU reference
backend is fully functional; CUDA/HIP/HLSL manifests ship as contracts and
surface ToolchainMissing on machines without their compilers.

Drivers speak a five-line wire protocol on stdout:

    PEAK_RUN_MS <decimal>      (debug mode only, one per measured run)
    PEAK_TIME_MS <decimal>
    PEAK_OUT <array> <path>    (zero or more, when capture was requested)
    PEAK_INVALID_CONFIG        (alone; exit code 3)

Exit codes: 0 ok, 3 invalid configuration, anything else runtime error.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import subprocess
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from ..context import KernelContext
from ..errors import CompileFailure, ProtocolViolation, ToolchainMissing, UnknownBackend
from ..speclang import ExecutionParams

_DATA = resources.files("peak") / "data" / "backends"

STATUSES = ("ok", "invalid_config", "compile_error", "runtime_error", "timeout", "reference_capture")


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    display_name: str
    warp_size: int
    max_threads_per_block: int
    compile_command_template: str
    run_timeout: float
    device_slots: int
    driver_template: str = ""

    def __post_init__(self):
        if self.warp_size < 1 or self.max_threads_per_block < self.warp_size:
            raise ValueError("max_threads_per_block must be >= warp_size >= 1")
        if self.device_slots < 1:
            raise ValueError("device_slots must be >= 1")

    @classmethod
    def from_manifest(cls, obj: dict) -> "BackendDescriptor":
        return cls(
            id=obj["id"],
            display_name=obj["display_name"],
            warp_size=int(obj["warp_size"]),
            max_threads_per_block=int(obj["max_threads_per_block"]),
            compile_command_template=obj["compile_command_template"],
            run_timeout=float(obj["run_timeout"]),
            device_slots=int(obj["device_slots"]),
            driver_template=obj.get("driver_template", ""),
        )


@dataclass(frozen=True)
class TimingPolicy:
    warmup_runs: int = 2
    measured_runs: int = 10
    aggregate: str = "mean"

    def __post_init__(self):
        if self.measured_runs < 1:
            raise ValueError("measured_runs must be >= 1")
        if self.warmup_runs < 0:
            raise ValueError("warmup_runs must be >= 0")
        if self.aggregate != "mean":
            raise ValueError("only arithmetic-mean aggregation is defined")


@dataclass
class RunResult:
    status: str
    mean_time_ms: float | None = None
    outputs: dict[str, bytes] | None = None
    stderr_excerpt: str = ""
    run_times_ms: list[float] | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def render_template(template: str, mapping: dict[str, str]) -> str:
    """Fill `{{name}}` slots; unknown slots are an error (typo guard)."""
    out = template
    for key, value in mapping.items():
        out = out.replace("{{" + key + "}}", str(value))
    if "{{" in out:
        start = out.index("{{")
        raise KeyError(f"unfilled template slot near: {out[start:start + 40]!r}")
    return out


class Backend:
    """One backend plugin: descriptor + driver generator."""

    def __init__(self, descriptor: BackendDescriptor, template_text: str):
        self.descriptor = descriptor
        self.template_text = template_text

    @property
    def id(self) -> str:
        return self.descriptor.id

    def generate_driver(
        self,
        ctx: KernelContext,
        params: ExecutionParams,
        policy: TimingPolicy,
        capture_outputs: bool,
        capture_dir: Path | str | None = None,
        debug: bool = False,
    ) -> str:
        raise NotImplementedError


_registry: dict[str, Backend] = {}
_registry_lock = threading.Lock()


def register_backend(backend: Backend) -> None:
    with _registry_lock:
        _registry[backend.id] = backend


def get_backend(backend_id: str) -> Backend:
    with _registry_lock:
        if backend_id in _registry:
            return _registry[backend_id]
    backend = _load_builtin(backend_id)
    register_backend(backend)
    return backend


def _load_builtin(backend_id: str) -> Backend:
    manifest_path = _DATA / f"{backend_id}.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise UnknownBackend(f"no backend manifest for '{backend_id}'") from None
    descriptor = BackendDescriptor.from_manifest(manifest)
    template = ""
    if descriptor.driver_template:
        tpl_path = _DATA / descriptor.driver_template
        try:
            template = tpl_path.read_text()
        except FileNotFoundError:
            template = ""
    if backend_id == "cpu-ref":
        from .cpu_ref import CpuRefBackend
        return CpuRefBackend(descriptor, template)
    from .gpu import GpuBackend
    return GpuBackend(descriptor, template)


def load_backend_manifest(path: Path | str) -> Backend:
    """External plugin manifest: descriptor fields + driver template path."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    descriptor = BackendDescriptor.from_manifest(manifest)
    template = ""
    if descriptor.driver_template:
        template = (path.parent / descriptor.driver_template).read_text()
    if descriptor.id == "cpu-ref":
        from .cpu_ref import CpuRefBackend
        backend: Backend = CpuRefBackend(descriptor, template)
    else:
        from .gpu import GpuBackend
        backend = GpuBackend(descriptor, template)
    register_backend(backend)
    return backend


# --- compile ------------------------------------------------------------------

def compile_sources(
    descriptor: BackendDescriptor,
    sources: dict[str, str],
    workdir: Path | str | None = None,
) -> Path:
    """Compile a generated driver to an executable artifact.

    `sources` carries the driver plus the raw regions; the CPU reference
    backend embeds regions into the driver at generation time, other
    backends may compile them separately.
    """
    workdir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="peak-build-"))
    workdir.mkdir(parents=True, exist_ok=True)
    suffix = ".c" if descriptor.id == "cpu-ref" else ".src"
    source_path = workdir / f"driver{suffix}"
    source_path.write_text(sources["driver"], encoding="utf-8")
    output_path = workdir / "kernel.exe"
    command = render_template(
        descriptor.compile_command_template,
        {"output": str(output_path), "source": str(source_path)},
    )
    argv = shlex.split(command)
    if shutil.which(argv[0]) is None:
        raise ToolchainMissing(
            f"backend '{descriptor.id}' needs '{argv[0]}', which is not installed")
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise CompileFailure(
            f"compilation failed for backend '{descriptor.id}'",
            stderr=proc.stderr)
    return output_path


# --- run -----------------------------------------------------------------------

def run_artifact(
    artifact: Path | str,
    timeout: float,
    capture: bool = False,
) -> RunResult:
    """Execute a compiled driver and parse the wire protocol."""
    artifact = Path(artifact)
    guard = os.environ.get("PEAK_RUN_GUARD_FILE")
    guard_path = Path(guard) if guard else None
    if guard_path is not None:
        if guard_path.exists():
            raise AssertionError("exclusive-run guard violated: overlapping run phases")
        guard_path.touch()
    try:
        try:
            proc = subprocess.run(
                [str(artifact)], capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired as exc:
            stderr = exc.stderr or b""
            if isinstance(stderr, bytes):
                stderr = stderr.decode(errors="replace")
            return RunResult(status="timeout", stderr_excerpt=stderr[-2000:])
    finally:
        if guard_path is not None:
            guard_path.unlink(missing_ok=True)

    stderr_excerpt = proc.stderr[-2000:]
    lines = proc.stdout.splitlines()
    if proc.returncode == 3 or any(l.strip() == "PEAK_INVALID_CONFIG" for l in lines):
        return RunResult(status="invalid_config", stderr_excerpt=stderr_excerpt)
    if proc.returncode != 0:
        return RunResult(status="runtime_error", stderr_excerpt=stderr_excerpt)

    mean_time: float | None = None
    run_times: list[float] = []
    outputs: dict[str, bytes] = {}
    for line in lines:
        parts = line.split(" ", 2)
        if parts[0] == "PEAK_TIME_MS" and len(parts) >= 2:
            mean_time = float(parts[1])
        elif parts[0] == "PEAK_RUN_MS" and len(parts) >= 2:
            run_times.append(float(parts[1]))
        elif parts[0] == "PEAK_OUT" and len(parts) == 3:
            name, path = parts[1], parts[2]
            if capture:
                outputs[name] = Path(path).read_bytes()
    if mean_time is None:
        raise ProtocolViolation(
            "driver exited 0 without a PEAK_TIME_MS line; stdout was: "
            + proc.stdout[:500])
    return RunResult(
        status="ok",
        mean_time_ms=mean_time,
        outputs=outputs if capture else None,
        stderr_excerpt=stderr_excerpt,
        run_times_ms=run_times or None,
    )


# --- batch orchestration ----------------------------------------------------------

@dataclass
class BatchJob:
    ctx: KernelContext
    params: ExecutionParams
    policy: TimingPolicy = field(default_factory=TimingPolicy)
    capture: bool = False
    debug: bool = False


_device_leases: dict[str, threading.BoundedSemaphore] = {}
_lease_lock = threading.Lock()


def _device_lease(descriptor: BackendDescriptor) -> threading.BoundedSemaphore:
    # process-wide: every session sharing this interpreter shares the slots
    with _lease_lock:
        if descriptor.id not in _device_leases:
            _device_leases[descriptor.id] = threading.BoundedSemaphore(descriptor.device_slots)
        return _device_leases[descriptor.id]


def compile_and_run(
    backend: Backend,
    job: BatchJob,
    timeout: float | None = None,
) -> RunResult:
    """Full pipeline for one job; model/compile failures become statuses."""
    with tempfile.TemporaryDirectory(prefix="peak-job-") as tmp:
        tmpdir = Path(tmp)
        try:
            driver = backend.generate_driver(
                job.ctx, job.params, job.policy,
                capture_outputs=job.capture, capture_dir=tmpdir, debug=job.debug)
            artifact = compile_sources(
                backend.descriptor,
                {
                    "driver": driver,
                    "device": job.ctx.device,
                    "host": job.ctx.host,
                    "macros": job.ctx.macros,
                },
                workdir=tmpdir,
            )
        except CompileFailure as exc:
            return RunResult(status="compile_error", stderr_excerpt=exc.stderr[-4000:])
        lease = _device_lease(backend.descriptor)
        with lease:
            return run_artifact(
                artifact,
                timeout=timeout if timeout is not None else backend.descriptor.run_timeout,
                capture=job.capture,
            )


def execute_batch(
    jobs: list[BatchJob],
    parallel_compile: int = 4,
    timeout: float | None = None,
) -> list[RunResult]:
    """Compile up to `parallel_compile` jobs concurrently; run under device
    leases. Result order matches job order; one job's failure never aborts
    the others."""
    if not jobs:
        return []
    backend_ids = {job.ctx.backend for job in jobs}
    if len(backend_ids) != 1:
        raise ValueError("all jobs in a batch must target the same backend")
    backend = get_backend(backend_ids.pop())

    def run_one(job: BatchJob) -> RunResult:
        try:
            return compile_and_run(backend, job, timeout=timeout)
        except ProtocolViolation as exc:
            return RunResult(status="runtime_error", stderr_excerpt=str(exc))

    with ThreadPoolExecutor(max_workers=max(1, parallel_compile)) as pool:
        return list(pool.map(run_one, jobs))
