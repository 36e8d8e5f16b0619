"""Deterministic fixtures for tests and demos.

`build_fixture_store` materializes the planted three-checkpoint workflow
used across the test suites and the dashboard's integration tests: a
matmul seed plus two mock-transformed children, carrying planted
performance reports of exactly 100/50/25 ms so trajectory math lands on
clean 1x/2x/4x points. The store is fully functional: references are
built, so further transformations can be applied against it.

Run as a module to build (and optionally serve) a fixture store:

    python3 -m peak.testing build <root>
    python3 -m peak.testing serve <root> --port 7433
"""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

from .perf import PerfPoint, PerfReport
from .service.session import Session, SessionConfig
from .speclang import enumerate_input_keys
from .transforms import FIXTURES_ROOT

SEED_BUNDLE = resources.files("peak") / "data" / "seeds" / "matmul_small"
PLANTED_TIMES_MS = (100.0, 50.0, 25.0)


def fixture_config(root: Path | str) -> SessionConfig:
    return SessionConfig(
        workflow_root=Path(root),
        mock_fixtures=Path(str(FIXTURES_ROOT / "cpu-ref")),
        validator_budget=4,
        reference_budget=4,
        warmup_runs=0,
        measured_runs=1,
    )


def _planted_report(ctx_digest: str, input_key, tuning: dict, ms: float) -> PerfReport:
    best = PerfPoint(dict(tuning), ms)
    return PerfReport(
        ctx_digest=ctx_digest,
        input_key=input_key.key_json(),
        strategy="exhaustive",
        evaluated=1,
        pruned_invalid=0,
        best=best,
        top_k=[best],
        points=[best],
    )


def build_fixture_store(root: Path | str) -> list[str]:
    """Seed + refactor + tb-tiling, with planted 100/50/25 ms reports.

    Returns the three checkpoint ids in lineage order.
    """
    with Session(fixture_config(root)) as session:
        seed = session.init(
            str(SEED_BUNDLE / "spec.pspec"),
            str(SEED_BUNDLE / "device.src"),
            str(SEED_BUNDLE / "host.src"),
            str(SEED_BUNDLE / "macros.src"),
        )
        _, refactored = session.transform("seed", "refactor")
        _, tiled = session.transform(refactored.id.hash, "tb-tiling")

        key = enumerate_input_keys(session.store.restore(seed.id).spec)[0]
        chain = [seed, refactored, tiled]
        for ckpt, ms in zip(chain, PLANTED_TIMES_MS):
            session.store.attach_perf(
                ckpt.id,
                _planted_report(ckpt.id.hash, key, key.tuning_values, ms))
        session.store.set_ref("tip", tiled.id)
        return [c.id.hash for c in chain]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("build", "serve"):
        print("usage: python3 -m peak.testing {build|serve} <root> [--port N]",
              file=sys.stderr)
        return 2
    verb, root = argv[0], Path(argv[1])
    if not (root / "checkpoints").is_dir():
        ids = build_fixture_store(root)
        print("\n".join(ids))
    if verb == "serve":
        port = int(argv[argv.index("--port") + 1]) if "--port" in argv else 7433
        from .service.api import serve
        serve(fixture_config(root), port=port)
    return 0


if __name__ == "__main__":
    sys.exit(main())
