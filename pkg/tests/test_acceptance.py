"""Acceptance criteria, one test per criterion.

Each test prints a `ACCEPTANCE <criterion>: PASS|FAIL` line through the
conftest reporting hook. Tolerances and budgets are pinned here, not
configurable. Run with `pytest tests/test_acceptance.py -v`.
"""

from __future__ import annotations

import json
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from peak.backends import BatchJob, TimingPolicy, compile_and_run
from peak.context import KernelContext, canonical_serialize, digest, load_bundle
from peak.errors import StoreLocked
from peak.perf import Exhaustive, PerfQuery, RandomSearch, evaluate, tuner_sweep
from peak.speclang import (
    ExecutionParams,
    enumerate_execution_params,
    parse_spec,
    sample_execution_params,
)
from peak.service.session import Session
from peak.store import WorkflowStore
from peak.testing import SEED_BUNDLE, fixture_config
from peak.transforms import apply_transformation, load_catalog
from peak.transforms.llm import MockLlmClient, ScriptedFailureClient
from peak.transforms import FIXTURES_ROOT
from peak.validation import DEFAULT_TOLERANCES, build_reference, compare_buffers, validate

from conftest import forced_time_ctx
from oracle import buffer_to_array, init_values, matmul_f32
from specgen import brute_force_enumerate, flatten_params, generate_spec

pytestmark = pytest.mark.acceptance

FAST = TimingPolicy(warmup_runs=0, measured_runs=1)
CPU_FIXTURES = str(FIXTURES_ROOT / "cpu-ref")


@pytest.fixture(scope="module")
def seed_ctx():
    return load_bundle(str(SEED_BUNDLE))


@pytest.fixture(scope="module")
def refs(seed_ctx):
    return build_reference(seed_ctx, budget=4, seed=7)


@pytest.fixture(scope="module")
def catalog():
    return load_catalog()


def test_spec_language_oracle_equivalence():
    """200 random small specs: enumeration equals brute force, under 10 s."""
    start = time.monotonic()
    for seed in range(200):
        gen = generate_spec(random.Random(seed))
        expected = brute_force_enumerate(gen)
        got = [flatten_params(p)
               for p in enumerate_execution_params(parse_spec(gen.source))]
        assert got == expected, f"divergence for generator seed {seed}"
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_enumeration_count_132():
    """The shipped 2k/4k seed spec yields exactly 132 execution parameters."""
    from importlib import resources
    spec_path = resources.files("peak") / "data" / "seeds" / "matmul" / "spec.pspec"
    spec = parse_spec(spec_path.read_text())
    entries = enumerate_execution_params(spec)
    # brute force: exponent pairs (x, y) in 0..10 with x + y <= 10
    per_n = sum(1 for ex in range(11) for ey in range(11) if ex + ey <= 10)
    assert per_n == 66
    assert len(entries) == 2 * per_n == 132


def test_functional_ground_truth(seed_ctx, refs, catalog):
    """Naive matmul bit-exact at n in {16, 64}; tiled fixture within f32
    tolerance; transposed-index bug rejected. Under 30 s."""
    start = time.monotonic()

    for n in (16, 64):
        params = ExecutionParams(
            {"n": n}, {"A": n * n, "B": n * n, "C": n * n},
            {"BLOCK_X": 8, "BLOCK_Y": 4})
        from peak.backends import get_backend
        result = compile_and_run(
            get_backend("cpu-ref"), BatchJob(seed_ctx, params, FAST, capture=True))
        assert result.status == "ok"
        got = buffer_to_array(result.outputs["C"], "f32").reshape(n, n)
        a = init_values("random", 11, "f32", n * n).reshape(n, n)
        b = init_values("random", 23, "f32", n * n).reshape(n, n)
        assert np.array_equal(got, matmul_f32(a, b)), f"naive mismatch at n={n}"

    # tiled fixture: the mock tb-tiling result must pass under the pinned
    # f32 tolerance (abs 1e-6, rel 1e-3)
    client = MockLlmClient(CPU_FIXTURES)
    refactored = apply_transformation(
        seed_ctx, catalog["refactor"], client, refs,
        validator_budget=4, max_retries=0).result_ctx
    tiled = apply_transformation(
        refactored, catalog["tb-tiling"], client, refs,
        validator_budget=4, max_retries=0).result_ctx
    assert tiled is not None
    policy = DEFAULT_TOLERANCES["f32"]
    assert policy.abs_tol == 1e-6 and policy.rel_tol == 1e-3
    report = validate(tiled, refs, budget=8, seed=3)
    assert report.passed, report.reason

    # injected transposed-index bug must be rejected
    buggy = KernelContext(
        device=seed_ctx.device.replace("C[i * n + j]", "C[j * n + i]"),
        host=seed_ctx.host, macros=seed_ctx.macros, spec=seed_ctx.spec,
        backend="cpu-ref", kernel_name="matmul")
    bug_report = validate(buggy, refs, budget=8, seed=3)
    assert not bug_report.passed

    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"took {elapsed:.1f}s"


def test_end_to_end_mock_workflow(tmp_path):
    """run-sequence over the X1-85 sequence: 3 validated checkpoints and
    telescoping trajectory arithmetic. Under 2 min."""
    start = time.monotonic()
    config = fixture_config(tmp_path / "wf")
    config.validator_budget = 16
    with Session(config) as session:
        session.init(
            str(SEED_BUNDLE / "spec.pspec"), str(SEED_BUNDLE / "device.src"),
            str(SEED_BUNDLE / "host.src"), str(SEED_BUNDLE / "macros.src"))
        committed = session.run_sequence(["refactor", "tb-tiling", "thread-tiling"])
        assert len(committed) == 3
        for ckpt in committed:
            validation = session.store.load_validation(ckpt.id)
            assert validation is not None and validation["verdict"] == "pass"

        # attach measured perf to every checkpoint on the path, then check
        # cumulative == product of steps within 1e-12 relative
        session.evaluate_checkpoint("seed", strategy=RandomSearch(budget=6, seed=2))
        for ckpt in committed:
            session.evaluate_checkpoint(
                ckpt.id.hash, strategy=RandomSearch(budget=6, seed=2))
        trajectory = session.trajectory(committed[-1].id.hash)
        assert len(trajectory.steps) == 4
        product = 1.0
        for step in trajectory.steps:
            product *= step.step_speedup
            assert abs(step.cumulative_speedup - product) <= 1e-12 * product
    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"took {elapsed:.1f}s"


def test_validation_budget_semantics(seed_ctx, refs):
    """Budget 16 samples exactly min(16, space) distinct valid entries,
    reproducibly per seed."""
    spec = seed_ctx.spec
    space = enumerate_execution_params(spec)
    assert len(space) > 16
    for sample_seed in (1, 5):
        sampled = sample_execution_params(spec, 16, sample_seed)
        assert len(sampled) == 16
        keys = {json.dumps(p.to_json(), sort_keys=True) for p in sampled}
        assert len(keys) == 16
        assert sample_execution_params(spec, 16, sample_seed) == sampled
        for p in sampled:
            assert p in space
    tiny = parse_spec("input n: i32 in {4}\ntune T: i32 in {1,2,3}\n")
    assert len(sample_execution_params(tiny, 16, 0)) == 3

    report = validate(seed_ctx, refs, budget=16, seed=9)
    assert report.sampled == 16
    assert report.passed


def test_top_k_pruning():
    """Exhaustive over a 300-point synthetic space with keep_top=128."""
    ctx = forced_time_ctx(
        expr="5.0 + (double)((@TUNE(T) * 7919) % 300) * 0.5",
        values="range(0, 300)")
    query = PerfQuery(
        input_key=ExecutionParams({"n": 1}, {}, {}),
        strategy=Exhaustive(), policy=FAST, keep_top=128)
    report = evaluate(ctx, query)
    assert report.evaluated == 300
    assert len(report.top_k) == 128
    times = [p.mean_time_ms for p in report.top_k]
    assert times == sorted(times)
    full = sorted(p.mean_time_ms for p in report.points)
    assert times == full[:128]


def test_planted_optimum_tuning():
    """Exhaustive finds the planted best in 10/10 runs; saturated
    random-search matches it."""
    ctx = forced_time_ctx(expr="10.0 * @TUNE(T)", values="range(1, 9)")
    key = ExecutionParams({"n": 1}, {}, {})
    for run in range(10):
        report = evaluate(ctx, PerfQuery(input_key=key, strategy=Exhaustive(),
                                         policy=FAST, keep_top=8))
        assert report.best.tuning_values == {"T": 1}, f"run {run}"
    sampled = evaluate(ctx, PerfQuery(
        input_key=key, strategy=RandomSearch(budget=8, seed=4), policy=FAST))
    assert sampled.best.tuning_values == {"T": 1}


def test_tuner_budget_sweep_property():
    """random-search 5x at budgets {10, 50}: more budget, no worse mean."""
    ctx = forced_time_ctx(
        expr="5.0 + (double)((@TUNE(T) * 37) % 64) * 0.5",
        values="range(0, 64)")
    sweep = tuner_sweep(
        ctx, ExecutionParams({"n": 1}, {}, {}), "random-search",
        budgets=[10, 50], repeats=5, policy=FAST, seed=13)
    assert sweep[50]["mean"] <= sweep[10]["mean"]
    assert sweep[50]["failed_repeats"] == 0.0


def test_failure_taxonomy(seed_ctx, refs, catalog):
    """Scripted mock schedules produce exactly the configured rates."""
    base = MockLlmClient(CPU_FIXTURES)
    from peak.transforms import measure_reliability

    client = ScriptedFailureClient(
        base, {1: ("compile", None), 3: ("compile", None)})
    report = measure_reliability(
        seed_ctx, catalog["refactor"], client, refs,
        trials=5, validator_budget=16)
    assert report.compile_failure_rate == pytest.approx(0.4)
    assert report.success_rate == pytest.approx(0.6)
    assert report.reference_failure_rate == 0.0

    client = ScriptedFailureClient(base, {
        0: ("reference", ("A_AT(row, k) * B_AT(k, col)",
                          "A_AT(row, k) * B_AT(col, k)"))})
    report = measure_reliability(
        seed_ctx, catalog["refactor"], client, refs,
        trials=5, validator_budget=16)
    assert report.reference_failure_rate == pytest.approx(0.2)
    assert report.success_rate == pytest.approx(0.8)


def test_store_durability(tmp_path, seed_ctx):
    """1000 commit/restore round trips across a process restart; second
    writer fails fast."""
    root = tmp_path / "wf"
    script = f"""
import hashlib, sys
sys.path.insert(0, {str(Path("tests").resolve())!r})
from peak.context import canonical_serialize, load_bundle, replace_region
from peak.store import WorkflowStore
ctx = load_bundle({str(SEED_BUNDLE)!r})
store = WorkflowStore({str(root)!r}, writer=True)
lines = []
parent = None
for i in range(1000):
    variant = replace_region(ctx, "macros", f"/* variant {{i}} */\\n")
    ckpt = store.commit(variant, parent=parent)
    parent = ckpt.id
    blob = canonical_serialize(variant)
    lines.append(f"{{ckpt.id.hash}} {{hashlib.sha256(blob).hexdigest()}}")
print("\\n".join(lines))
"""
    proc = subprocess.run([sys.executable, "-c", script],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    entries = [line.split() for line in proc.stdout.strip().splitlines()]
    assert len(entries) == 1000

    import hashlib
    store = WorkflowStore(root)  # fresh process state: the restart boundary
    for ckpt_id, blob_hash in entries:
        restored = store.restore(ckpt_id)
        assert hashlib.sha256(canonical_serialize(restored)).hexdigest() == blob_hash

    with WorkflowStore(root, writer=True):
        with pytest.raises(StoreLocked):
            WorkflowStore(root, writer=True)


def test_region_isolation_across_all_mock_applications(seed_ctx, refs, catalog):
    """Non-target regions byte-identical before/after every pass, across the
    full mock transformation chain."""
    violations: list[tuple] = []

    def observer(index, region, before, after):
        for other in ("device", "host", "macros"):
            if other != region and before.region(other) != after.region(other):
                violations.append((index, region, other))

    client = MockLlmClient(CPU_FIXTURES)
    work = seed_ctx
    for name in ("refactor", "tb-tiling", "thread-tiling"):
        outcome = apply_transformation(
            work, catalog[name], client, refs,
            validator_budget=4, max_retries=0, observer=observer)
        assert outcome.succeeded, f"{name}: {outcome.status}"
        work = outcome.result_ctx
    assert violations == []
