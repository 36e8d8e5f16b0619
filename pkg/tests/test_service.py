"""CLI and HTTP API: thin-shell equivalence, verbs, jobs, errors."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from peak.service.api import make_app
from peak.service.cli import main as cli_main
from peak.service.session import Session, SessionConfig
from peak.transforms import FIXTURES_ROOT

SEED_DIR = Path("src/peak/data/seeds/matmul_small")
CPU_FIXTURES = str(FIXTURES_ROOT / "cpu-ref")


def make_session(root: Path, **kw) -> Session:
    config = SessionConfig(
        workflow_root=root,
        mock_fixtures=Path(CPU_FIXTURES),
        validator_budget=4,
        reference_budget=4,
        warmup_runs=0,
        measured_runs=1,
        **kw)
    return Session(config, writer=True)


@pytest.fixture(scope="module")
def seeded_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc") / "wf"
    with make_session(root) as session:
        session.init(SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                     SEED_DIR / "host.src", SEED_DIR / "macros.src")
    return root


def cli(*argv) -> tuple[int, str]:
    import io
    import contextlib
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(out):
        code = cli_main([str(a) for a in argv])
    return code, out.getvalue()


class TestCli:
    def test_init_transform_log_trajectory(self, tmp_path):
        root = tmp_path / "wf"
        code, out = cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
                        "init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                        SEED_DIR / "host.src", SEED_DIR / "macros.src")
        assert code == 0, out
        assert "seed committed" in out

        code, out = cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
                        "transform", "seed", "refactor")
        assert code == 0, out
        assert "committed:" in out

        code, out = cli("--root", root, "log")
        assert code == 0
        assert "refactor" in out and "seed" in out

    def test_run_sequence_produces_three_checkpoints(self, tmp_path):
        root = tmp_path / "wf"
        cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
            "init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
            SEED_DIR / "host.src", SEED_DIR / "macros.src")
        seq = tmp_path / "seq.txt"
        seq.write_text("refactor\ntb-tiling\nthread-tiling\n")
        code, out = cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
                        "run-sequence", seq)
        assert code == 0, out
        assert out.count(":") >= 3
        with Session(SessionConfig(workflow_root=root, mock_fixtures=Path(CPU_FIXTURES)),
                     writer=False) as session:
            entries = session.log_tree()
            assert len(entries) == 4  # seed + 3
            assert all(e["validation_verdict"] == "pass"
                       for e in entries if e["transformation_name"])

    def test_failed_transform_commits_nothing(self, tmp_path):
        root = tmp_path / "wf"
        cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
            "init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
            SEED_DIR / "host.src", SEED_DIR / "macros.src")
        # transpose has no cpu-ref fixture: the model call fails, no commit
        code, out = cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
                        "transform", "seed", "transpose")
        assert code != 0
        assert "PEAK_ERROR" in out
        code, out = cli("--root", root, "log")
        assert out.count("\n") == 1  # only the seed line

    def test_unknown_checkpoint_error_line(self, tmp_path, seeded_root):
        code, out = cli("--root", seeded_root, "--mock-fixtures", CPU_FIXTURES,
                        "transform", "nonexistent", "refactor")
        assert code == 2
        assert "PEAK_ERROR unknown-checkpoint" in out

    def test_tag_diff_restore(self, tmp_path, seeded_root):
        code, out = cli("--root", seeded_root, "tag", "base", "seed")
        assert code == 0
        code, out = cli("--root", seeded_root, "diff", "seed", "base")
        assert code == 0
        assert "(identical)" in out
        dest = tmp_path / "restored"
        code, out = cli("--root", seeded_root, "restore", "seed", "--to", dest)
        assert code == 0
        assert (dest / "device.src").exists()

    def test_transformations_listing(self, tmp_path, seeded_root):
        code, out = cli("--root", seeded_root, "transformations")
        assert code == 0
        assert "tb-tiling" in out and "passes=6 calls= 9" in out

    def test_config_file_with_overrides(self, tmp_path):
        config = {
            "workflow_root": str(tmp_path / "wf"),
            "validator_budget": 4,
            "reference_budget": 4,
            "warmup_runs": 0,
            "measured_runs": 1,
        }
        cfg = tmp_path / "peak.json"
        cfg.write_text(json.dumps(config))
        code, out = cli("--config", cfg, "--mock-fixtures", CPU_FIXTURES,
                        "init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                        SEED_DIR / "host.src", SEED_DIR / "macros.src")
        assert code == 0, out

    def test_guessed_kernel_name(self, tmp_path):
        # init without --kernel-name: inferred from `void matmul(...)`
        root = tmp_path / "wf"
        code, out = cli("--root", root, "--mock-fixtures", CPU_FIXTURES,
                        "init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                        SEED_DIR / "host.src")
        assert code == 0, out


class TestCliLibraryEquivalence:
    def _tree(self, root: Path) -> dict[str, object]:
        # store bytes with created_at excluded (timestamps are metadata only)
        out = {}
        for path in sorted(root.rglob("*")):
            if path.is_dir() or path.name == ".lock":
                continue
            rel = str(path.relative_to(root))
            if path.name == "meta.json":
                obj = json.loads(path.read_text())
                obj.pop("created_at", None)
                out[rel] = json.dumps(obj, sort_keys=True)
            else:
                out[rel] = path.read_bytes()
        return out

    def test_cli_and_library_produce_identical_stores(self, tmp_path):
        lib_root = tmp_path / "lib-root"
        with make_session(lib_root) as session:
            session.init(SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                         SEED_DIR / "host.src", SEED_DIR / "macros.src")
            session.transform("seed", "refactor")

        cli_root = tmp_path / "cli-root"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "workflow_root": str(cli_root),
            "mock_fixtures": CPU_FIXTURES,
            "validator_budget": 4,
            "reference_budget": 4,
            "warmup_runs": 0,
            "measured_runs": 1,
        }))
        for argv in (
            ["init", SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
             SEED_DIR / "host.src", SEED_DIR / "macros.src"],
            ["transform", "seed", "refactor"],
        ):
            code, out = cli("--config", cfg, *argv)
            assert code == 0, out

        assert self._tree(lib_root) == self._tree(cli_root)


@pytest.fixture(scope="module")
def api_client(tmp_path_factory):
    root = tmp_path_factory.mktemp("api") / "wf"
    session = make_session(root)
    session.init(SEED_DIR / "spec.pspec", SEED_DIR / "device.src",
                 SEED_DIR / "host.src", SEED_DIR / "macros.src")
    app = make_app(session)
    with TestClient(app) as client:
        yield client
    session.close()


def wait_job(client, job_id: str, timeout: float = 60.0) -> dict:
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/api/jobs/{job_id}").json()
        if body["state"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise TimeoutError(f"job {job_id} did not finish")


class TestApi:
    def test_checkpoint_listing(self, api_client):
        body = api_client.get("/api/checkpoints").json()
        assert len(body["checkpoints"]) >= 1
        assert "seed" in body["refs"]

    def test_transform_job_lifecycle(self, api_client):
        before = len(api_client.get("/api/checkpoints").json()["checkpoints"])
        response = api_client.post("/api/checkpoints/seed/transform",
                                   json={"name": "refactor"})
        assert response.status_code == 202
        job = wait_job(api_client, response.json()["job_id"])
        assert job["state"] == "done", job
        after = api_client.get("/api/checkpoints").json()["checkpoints"]
        assert len(after) == before + 1
        new_id = job["result"]["checkpoint"]["id"]
        detail = api_client.get(f"/api/checkpoints/{new_id}").json()
        assert detail["validation"]["verdict"] == "pass"

    def test_evaluate_job(self, api_client):
        seed_id = api_client.get("/api/checkpoints").json()["refs"]["seed"]
        response = api_client.post(
            f"/api/checkpoints/{seed_id}/evaluate",
            json={"strategy": "random", "budget": 3, "seed": 5})
        assert response.status_code == 202
        job = wait_job(api_client, response.json()["job_id"])
        assert job["state"] == "done", job
        assert job["result"]["perf"]["evaluated"] >= 1

    def test_self_diff_empty(self, api_client):
        body = api_client.get("/api/diff", params={"a": "seed", "b": "seed"}).json()
        assert body["empty"] is True

    def test_region_fetch(self, api_client):
        response = api_client.get("/api/checkpoints/seed/region/device")
        assert response.status_code == 200
        assert "matmul" in response.text

    def test_unknown_checkpoint_404(self, api_client):
        response = api_client.post("/api/checkpoints/ffffffffffff/transform",
                                   json={"name": "refactor"})
        assert response.status_code == 404
        assert response.json()["code"] == "unknown-checkpoint"

    def test_bad_body_422(self, api_client):
        response = api_client.post("/api/checkpoints/seed/transform", json={})
        assert response.status_code == 422

    def test_transformations_endpoint(self, api_client):
        body = api_client.get("/api/transformations").json()
        names = {t["name"] for t in body["transformations"]}
        assert {"refactor", "tb-tiling", "thread-tiling"} <= names

    def test_refs_post(self, api_client):
        seed_id = api_client.get("/api/checkpoints").json()["refs"]["seed"]
        response = api_client.post("/api/refs", json={"name": "alias", "id": seed_id})
        assert response.status_code == 200
        body = api_client.get("/api/checkpoints").json()
        assert body["refs"]["alias"] == seed_id

    def test_job_survives_until_fetched(self, api_client):
        response = api_client.post("/api/checkpoints/seed/evaluate",
                                   json={"strategy": "random", "budget": 1})
        job_id = response.json()["job_id"]
        wait_job(api_client, job_id)
        again = api_client.get(f"/api/jobs/{job_id}").json()
        assert again["state"] == "done"


class TestWriterExclusivity:
    def test_second_session_fails_fast(self, tmp_path):
        from peak.errors import StoreLocked
        root = tmp_path / "wf"
        with make_session(root):
            with pytest.raises(StoreLocked):
                make_session(root)


class TestStaticUi:
    def test_ui_route_serves_built_assets(self, tmp_path, seeded_root):
        dist = Path("frontend/dist")
        if not dist.is_dir():
            pytest.skip("frontend not built")
        session = Session(
            SessionConfig(workflow_root=seeded_root, mock_fixtures=Path(CPU_FIXTURES)),
            writer=False)
        app = make_app(session, static_dir=dist)
        with TestClient(app) as client:
            response = client.get("/ui/")
            assert response.status_code == 200
            assert "peak" in response.text
            assert client.get("/ui/main.js").status_code == 200
