"""Content-addressed checkpoint store with git-like lineage.

One directory per checkpoint (keyed by context digest) holding the context
bundle plus metadata JSON; named refs in a single mutable file. Checkpoints
are append-only; validation/perf reports are attachable metadata. A single
writer per root is enforced with an exclusive lock file, commits are atomic
via write-to-temp-then-rename, and readers need no coordination.
"""

from __future__ import annotations

import datetime
import difflib
import fcntl
import json
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .context import (
    ContextDigest,
    KernelContext,
    digest,
    load_bundle,
    save_bundle,
)
from .errors import (
    DigestCollisionConflict,
    MissingPerfData,
    StoreLocked,
    UnknownCheckpoint,
    UnknownParent,
    UnknownRef,
)
from .perf import PerfReport, speedup
from .speclang import print_spec


def _now() -> str:
    forced = os.environ.get("PEAK_CLOCK")
    if forced:
        return forced
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class Checkpoint:
    id: ContextDigest
    parent: ContextDigest | None
    transformation_name: str | None
    created_at: str
    note: str = ""
    label: str = ""

    def to_json(self) -> dict:
        return {
            "id": self.id.hash,
            "parent": self.parent.hash if self.parent else None,
            "transformation_name": self.transformation_name,
            "created_at": self.created_at,
            "note": self.note,
            "label": self.label,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Checkpoint":
        return cls(
            id=ContextDigest(obj["id"]),
            parent=ContextDigest(obj["parent"]) if obj.get("parent") else None,
            transformation_name=obj.get("transformation_name"),
            created_at=obj.get("created_at", ""),
            note=obj.get("note", ""),
            label=obj.get("label", ""),
        )


@dataclass
class DiffResult:
    regions: dict[str, str]  # region kind -> unified diff ("" when identical)
    spec: str
    metadata: dict

    @property
    def empty(self) -> bool:
        return not self.spec and not any(self.regions.values())


@dataclass
class TrajectoryStep:
    checkpoint: Checkpoint
    best_time_ms: float
    cumulative_speedup: float
    step_speedup: float
    best_gflops: float | None = None
    percent_of_reference: float | None = None

    def to_json(self) -> dict:
        return {
            "id": self.checkpoint.id.hash,
            "short": self.checkpoint.id.short,
            "transformation_name": self.checkpoint.transformation_name,
            "best_time_ms": self.best_time_ms,
            "cumulative_speedup": self.cumulative_speedup,
            "step_speedup": self.step_speedup,
            "best_gflops": self.best_gflops,
            "percent_of_reference": self.percent_of_reference,
        }


@dataclass
class Trajectory:
    steps: list[TrajectoryStep] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"steps": [s.to_json() for s in self.steps]}


class WorkflowStore:
    """A workflow root on disk. Open with writer=True to mutate."""

    def __init__(self, root: Path | str, writer: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "checkpoints").mkdir(exist_ok=True)
        self._lock_fd: int | None = None
        if writer:
            self._acquire_lock()

    # --- locking -------------------------------------------------------

    def _acquire_lock(self) -> None:
        fd = os.open(self.root / ".lock", os.O_CREAT | os.O_RDWR)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(fd)
            raise StoreLocked(
                f"workflow root {self.root} already has a writer") from None
        os.ftruncate(fd, 0)
        os.write(fd, f"{os.getpid()}\n".encode())
        self._lock_fd = fd

    @property
    def is_writer(self) -> bool:
        return self._lock_fd is not None

    def _need_writer(self) -> None:
        if not self.is_writer:
            raise StoreLocked("store opened read-only; reopen with writer=True")

    def close(self) -> None:
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def __enter__(self) -> "WorkflowStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- paths ---------------------------------------------------------

    def _ckpt_dir(self, ckpt_id: ContextDigest | str) -> Path:
        h = ckpt_id.hash if isinstance(ckpt_id, ContextDigest) else ckpt_id
        return self.root / "checkpoints" / h

    @property
    def references_path(self) -> Path:
        return self.root / "references"

    # --- lookups --------------------------------------------------------

    def resolve(self, ref_or_id: str) -> ContextDigest:
        """Full id, unique prefix (>= 6 chars), or ref name."""
        refs = self._read_refs()
        if ref_or_id in refs:
            return ContextDigest(refs[ref_or_id])
        base = self.root / "checkpoints"
        if (base / ref_or_id).is_dir():
            return ContextDigest(ref_or_id)
        if len(ref_or_id) >= 6:
            matches = [d.name for d in base.iterdir() if d.name.startswith(ref_or_id)]
            if len(matches) == 1:
                return ContextDigest(matches[0])
            if len(matches) > 1:
                raise UnknownCheckpoint(f"ambiguous checkpoint prefix '{ref_or_id}'")
        raise UnknownCheckpoint(f"no checkpoint or ref named '{ref_or_id}'")

    def get(self, ckpt_id: ContextDigest | str) -> Checkpoint:
        meta_path = self._ckpt_dir(ckpt_id) / "meta.json"
        try:
            return Checkpoint.from_json(json.loads(meta_path.read_text()))
        except FileNotFoundError:
            raise UnknownCheckpoint(f"no checkpoint {ckpt_id}") from None

    def exists(self, ckpt_id: ContextDigest | str) -> bool:
        return (self._ckpt_dir(ckpt_id) / "meta.json").exists()

    def checkpoints(self) -> list[Checkpoint]:
        out = []
        base = self.root / "checkpoints"
        for d in sorted(base.iterdir()):
            if (d / "meta.json").exists():
                out.append(Checkpoint.from_json(json.loads((d / "meta.json").read_text())))
        out.sort(key=lambda c: (c.created_at, c.id.hash))
        return out

    def children(self, ckpt_id: ContextDigest) -> list[Checkpoint]:
        return [c for c in self.checkpoints()
                if c.parent is not None and c.parent.hash == ckpt_id.hash]

    # --- commit / restore -------------------------------------------------

    def commit(
        self,
        ctx: KernelContext,
        parent: ContextDigest | None = None,
        transformation_name: str | None = None,
        validation: dict | None = None,
        perf: PerfReport | None = None,
        note: str = "",
    ) -> Checkpoint:
        self._need_writer()
        from .context import check_placeholder_closure
        check_placeholder_closure(ctx)
        ckpt_id = digest(ctx)
        if parent is not None and not self.exists(parent):
            raise UnknownParent(f"parent {parent.short} not in store")
        if parent is not None and parent.hash == ckpt_id.hash:
            raise DigestCollisionConflict("checkpoint cannot be its own parent")

        target = self._ckpt_dir(ckpt_id)
        if target.exists():
            existing = self.get(ckpt_id)
            existing_parent = existing.parent.hash if existing.parent else None
            new_parent = parent.hash if parent else None
            if existing_parent != new_parent:
                raise DigestCollisionConflict(
                    f"context {ckpt_id.short} already committed under a different parent")
            return existing  # idempotent

        ckpt = Checkpoint(
            id=ckpt_id,
            parent=parent,
            transformation_name=transformation_name,
            created_at=_now(),
            note=note,
            label=ctx.label,
        )
        tmp = self.root / f"tmp-{uuid.uuid4().hex}"
        try:
            save_bundle(ctx, tmp / "bundle")
            (tmp / "meta.json").write_text(
                json.dumps(ckpt.to_json(), indent=2) + "\n", encoding="utf-8")
            if validation is not None:
                (tmp / "validation.json").write_text(
                    json.dumps(validation, indent=2) + "\n", encoding="utf-8")
            if perf is not None:
                (tmp / "perf.json").write_text(
                    json.dumps(perf.to_json(), indent=2) + "\n", encoding="utf-8")
                (tmp / "points.csv").write_text(perf.csv_rows(), encoding="utf-8")
            os.rename(tmp, target)
        finally:
            if tmp.exists():
                import shutil
                shutil.rmtree(tmp, ignore_errors=True)
        return ckpt

    def restore(self, ckpt_id: ContextDigest | str) -> KernelContext:
        bundle = self._ckpt_dir(ckpt_id) / "bundle"
        if not bundle.is_dir():
            raise UnknownCheckpoint(f"no checkpoint {ckpt_id}")
        ctx = load_bundle(bundle)
        want = ckpt_id.hash if isinstance(ckpt_id, ContextDigest) else ckpt_id
        if digest(ctx).hash != want:
            raise UnknownCheckpoint(
                f"stored bundle for {want[:12]} does not match its digest")
        return ctx

    # --- attached metadata --------------------------------------------------

    def attach_validation(self, ckpt_id: ContextDigest, report_json: dict) -> None:
        self._need_writer()
        if not self.exists(ckpt_id):
            raise UnknownCheckpoint(f"no checkpoint {ckpt_id.short}")
        (self._ckpt_dir(ckpt_id) / "validation.json").write_text(
            json.dumps(report_json, indent=2) + "\n", encoding="utf-8")

    def attach_perf(self, ckpt_id: ContextDigest, report: PerfReport) -> None:
        self._need_writer()
        if not self.exists(ckpt_id):
            raise UnknownCheckpoint(f"no checkpoint {ckpt_id.short}")
        (self._ckpt_dir(ckpt_id) / "perf.json").write_text(
            json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
        (self._ckpt_dir(ckpt_id) / "points.csv").write_text(
            report.csv_rows(), encoding="utf-8")

    def load_validation(self, ckpt_id: ContextDigest) -> dict | None:
        path = self._ckpt_dir(ckpt_id) / "validation.json"
        return json.loads(path.read_text()) if path.exists() else None

    def load_perf(self, ckpt_id: ContextDigest) -> PerfReport | None:
        path = self._ckpt_dir(ckpt_id) / "perf.json"
        return PerfReport.from_json(json.loads(path.read_text())) if path.exists() else None

    # --- refs ------------------------------------------------------------------

    def _read_refs(self) -> dict[str, str]:
        path = self.root / "refs.json"
        return json.loads(path.read_text()) if path.exists() else {}

    def set_ref(self, name: str, ckpt_id: ContextDigest) -> None:
        self._need_writer()
        if not self.exists(ckpt_id):
            raise UnknownCheckpoint(f"no checkpoint {ckpt_id.short}")
        refs = self._read_refs()
        refs[name] = ckpt_id.hash
        tmp = self.root / f"refs-{uuid.uuid4().hex}.tmp"
        tmp.write_text(json.dumps(refs, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.rename(tmp, self.root / "refs.json")

    def resolve_ref(self, name: str) -> ContextDigest:
        refs = self._read_refs()
        if name not in refs:
            raise UnknownRef(f"no ref named '{name}'")
        return ContextDigest(refs[name])

    def refs(self) -> dict[str, str]:
        return self._read_refs()

    # --- diff / trajectory ---------------------------------------------------------

    def diff(self, a: ContextDigest | str, b: ContextDigest | str) -> DiffResult:
        ctx_a, ctx_b = self.restore(a), self.restore(b)
        regions = {}
        for kind in ("device", "host", "macros"):
            regions[kind] = _unified(
                ctx_a.region(kind), ctx_b.region(kind), f"{kind}.src")
        spec_diff = _unified(print_spec(ctx_a.spec), print_spec(ctx_b.spec), "spec.pspec")
        a_id = a if isinstance(a, ContextDigest) else ContextDigest(str(a))
        b_id = b if isinstance(b, ContextDigest) else ContextDigest(str(b))
        perf_a, perf_b = self.load_perf(a_id), self.load_perf(b_id)
        metadata: dict = {}
        if perf_a and perf_b:
            metadata = {
                "best_time_ms": [perf_a.best_time_ms, perf_b.best_time_ms],
                "best_gflops": [perf_a.best_gflops, perf_b.best_gflops],
                "speedup_b_over_a": speedup(perf_b, perf_a),
            }
        return DiffResult(regions=regions, spec=spec_diff, metadata=metadata)

    def path_to_seed(self, tip: ContextDigest) -> list[Checkpoint]:
        path = [self.get(tip)]
        seen = {tip.hash}
        while path[-1].parent is not None:
            parent = path[-1].parent
            if parent.hash in seen:
                raise DigestCollisionConflict("lineage contains a cycle")
            seen.add(parent.hash)
            path.append(self.get(parent))
        return list(reversed(path))

    def trajectory(
        self, tip: ContextDigest, reference_time_ms: float | None = None
    ) -> Trajectory:
        path = self.path_to_seed(tip)
        reports: list[PerfReport] = []
        for ckpt in path:
            report = self.load_perf(ckpt.id)
            if report is None:
                raise MissingPerfData(
                    f"checkpoint {ckpt.id.short} has no performance report")
            reports.append(report)
        shared_keys = {json.dumps(r.input_key, sort_keys=True) for r in reports}
        if len(shared_keys) != 1:
            raise MissingPerfData(
                "trajectory checkpoints report different input keys")
        seed_time = reports[0].best_time_ms
        steps = []
        for i, (ckpt, report) in enumerate(zip(path, reports)):
            parent_time = reports[i - 1].best_time_ms if i else report.best_time_ms
            steps.append(TrajectoryStep(
                checkpoint=ckpt,
                best_time_ms=report.best_time_ms,
                cumulative_speedup=seed_time / report.best_time_ms,
                step_speedup=parent_time / report.best_time_ms,
                best_gflops=report.best_gflops,
                percent_of_reference=(
                    reference_time_ms / report.best_time_ms * 100.0
                    if reference_time_ms is not None else None),
            ))
        return Trajectory(steps)


def _unified(a: str, b: str, name: str) -> str:
    if a == b:
        return ""
    return "".join(difflib.unified_diff(
        a.splitlines(keepends=True), b.splitlines(keepends=True),
        fromfile=f"a/{name}", tofile=f"b/{name}"))
