"""HTTP API over one workflow root.

Reads are served directly; mutations (transform, evaluate) become queued
jobs executed by a single worker thread, honoring the store's single-writer
discipline. Job state transitions are journaled on disk so a crash cannot
leave a half-committed store (commits themselves are atomic renames). The
UI's static assets are served from /ui when built.
"""

from __future__ import annotations

import datetime
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from ..errors import (
    PeakError,
    StoreLocked,
    UnknownBackend,
    UnknownCheckpoint,
    UnknownRef,
    UnknownTransformation,
)
from ..perf import Exhaustive, RandomSearch, Tuner
from .session import Session, SessionConfig

TERMINAL_RETENTION_S = 24 * 3600

_NOT_FOUND = (UnknownCheckpoint, UnknownRef, UnknownTransformation, UnknownBackend)


@dataclass
class Job:
    id: str
    kind: str
    state: str = "queued"  # queued | running | done | failed
    result: dict | None = None
    error: str | None = None
    created_at: float = field(default_factory=time.time)
    finished_at: float | None = None
    fetched_terminal: bool = False

    def to_json(self) -> dict:
        out = {"id": self.id, "kind": self.kind, "state": self.state}
        if self.state == "done":
            out["result"] = self.result
        if self.state == "failed":
            out["error"] = self.error
        return out


class JobRegistry:
    """In-memory queue with an on-disk journal and one worker thread."""

    def __init__(self, journal_dir: Path):
        self.jobs: dict[str, Job] = {}
        self.queue: queue.Queue[tuple[Job, Callable[[], dict]]] = queue.Queue()
        self.lock = threading.Lock()
        journal_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = journal_dir / "journal.ndjson"
        self.worker = threading.Thread(target=self._run, daemon=True)
        self.worker.start()

    def _journal(self, job: Job) -> None:
        entry = {
            "ts": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "job": job.id, "kind": job.kind, "state": job.state,
            "error": job.error,
        }
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")

    def submit(self, kind: str, runner: Callable[[], dict]) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind)
        with self.lock:
            self.jobs[job.id] = job
        self._journal(job)
        self.queue.put((job, runner))
        return job

    def _run(self) -> None:
        while True:
            job, runner = self.queue.get()
            job.state = "running"
            self._journal(job)
            try:
                job.result = runner()
                job.state = "done"
            except Exception as exc:
                job.state = "failed"
                job.error = f"{type(exc).__name__}: {exc}"
            job.finished_at = time.time()
            self._journal(job)

    def get(self, job_id: str) -> Job | None:
        with self.lock:
            self._prune()
            job = self.jobs.get(job_id)
            if job is not None and job.state in ("done", "failed"):
                job.fetched_terminal = True
            return job

    def _prune(self) -> None:
        # terminal states survive until fetched once or 24h old
        now = time.time()
        for job_id, job in list(self.jobs.items()):
            if job.state not in ("done", "failed"):
                continue
            expired = job.finished_at and now - job.finished_at > TERMINAL_RETENTION_S
            if job.fetched_terminal and expired:
                del self.jobs[job_id]


class TransformBody(BaseModel):
    name: str


class EvaluateBody(BaseModel):
    strategy: str = "exhaustive"  # exhaustive | random | tuner
    budget: int = 100
    seed: int = 0
    plugin_id: str = "random-search"
    repeats: int = 1
    keep_top: int | None = None
    flops: str | None = None


class RefBody(BaseModel):
    name: str
    id: str


def make_app(session: Session, static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="peak", docs_url=None, redoc_url=None)
    jobs = JobRegistry(session.config.workflow_root / "jobs")
    refs_lock = threading.Lock()

    @app.exception_handler(PeakError)
    async def peak_error_handler(request: Request, exc: PeakError):
        if isinstance(exc, _NOT_FOUND):
            status = 404
        elif isinstance(exc, StoreLocked):
            status = 409
        else:
            status = 422
        return JSONResponse(status_code=status,
                            content={"code": exc.code, "message": exc.message})

    @app.get("/api/checkpoints")
    def list_checkpoints():
        return {"checkpoints": session.log_tree(), "refs": session.store.refs()}

    @app.get("/api/checkpoints/{ckpt_id}")
    def get_checkpoint(ckpt_id: str):
        resolved = session.store.resolve(ckpt_id)
        ckpt = session.store.get(resolved)
        perf = session.store.load_perf(resolved)
        return {
            "meta": ckpt.to_json(),
            "validation": session.store.load_validation(resolved),
            "perf": perf.to_json() if perf else None,
        }

    @app.get("/api/checkpoints/{ckpt_id}/region/{kind}")
    def get_region(ckpt_id: str, kind: str):
        ctx = session.store.restore(session.store.resolve(ckpt_id))
        return PlainTextResponse(ctx.region(kind))

    @app.get("/api/diff")
    def get_diff(a: str, b: str):
        result = session.diff(a, b)
        return {"regions": result.regions, "spec": result.spec,
                "metadata": result.metadata, "empty": result.empty}

    @app.get("/api/trajectory")
    def get_trajectory(tip: str, reference_ms: float | None = None):
        return session.trajectory(tip, reference_ms).to_json()

    @app.get("/api/transformations")
    def list_transformations():
        return {"transformations": [
            session.catalog[name].summary() for name in sorted(session.catalog)
        ]}

    @app.post("/api/checkpoints/{ckpt_id}/transform", status_code=202)
    def post_transform(ckpt_id: str, body: TransformBody):
        session.store.resolve(ckpt_id)   # 404 before queueing
        session.transformation(body.name)

        def runner() -> dict:
            outcome, ckpt = session.transform(ckpt_id, body.name)
            if ckpt is None:
                # structured payload: the UI renders the attempt log from it
                raise PeakError(json.dumps({
                    "status": outcome.status,
                    "attempts": [a.to_json() for a in outcome.attempts],
                }))
            return {
                "checkpoint": ckpt.to_json(),
                "attempts": [a.to_json() for a in outcome.attempts],
                "link": f"/api/checkpoints/{ckpt.id.hash}",
            }

        job = jobs.submit("transform", runner)
        return {"job_id": job.id, "link": f"/api/jobs/{job.id}"}

    @app.post("/api/checkpoints/{ckpt_id}/evaluate", status_code=202)
    def post_evaluate(ckpt_id: str, body: EvaluateBody):
        session.store.resolve(ckpt_id)
        if body.strategy == "exhaustive":
            strategy = Exhaustive()
        elif body.strategy == "random":
            strategy = RandomSearch(body.budget, body.seed)
        elif body.strategy == "tuner":
            strategy = Tuner(body.plugin_id, body.budget, body.repeats, body.seed)
        else:
            raise PeakError(f"unknown strategy '{body.strategy}'")

        def runner() -> dict:
            report = session.evaluate_checkpoint(
                ckpt_id, strategy=strategy, keep_top=body.keep_top,
                flops_expression=body.flops)
            return {"perf": report.to_json(),
                    "link": f"/api/checkpoints/{session.store.resolve(ckpt_id).hash}"}

        job = jobs.submit("evaluate", runner)
        return {"job_id": job.id, "link": f"/api/jobs/{job.id}"}

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            return JSONResponse(status_code=404, content={
                "code": "unknown-job", "message": f"no job {job_id}"})
        return job.to_json()

    @app.post("/api/refs")
    def post_ref(body: RefBody):
        with refs_lock:
            resolved = session.store.resolve(body.id)
            session.store.set_ref(body.name, resolved)
        return {"name": body.name, "id": resolved.hash}

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(config: SessionConfig, host: str = "127.0.0.1", port: int = 7433) -> None:
    import uvicorn

    session = Session(config, writer=True)
    static = _default_static_dir()
    app = make_app(session, static_dir=static)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        session.close()


def _default_static_dir() -> Path | None:
    # repo layout: frontend/dist next to the installed package when running
    # from a checkout; absent in wheels, where /ui simply is not mounted
    here = Path(__file__).resolve()
    for base in here.parents:
        candidate = base / "frontend" / "dist"
        if candidate.is_dir():
            return candidate
    return None
