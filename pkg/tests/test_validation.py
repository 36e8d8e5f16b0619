"""Validation: references, tolerance comparison, verdicts, plugins."""

from __future__ import annotations

import json

import numpy as np
import pytest

from peak.context import KernelContext, digest
from peak.errors import (
    DuplicatePlugin,
    IncompatibleReference,
    LengthMismatch,
    SeedExecutionFailure,
)
from peak.speclang import parse_spec
from peak.validation import (
    DEFAULT_TOLERANCES,
    PluginFinding,
    ReferenceStore,
    TolerancePolicy,
    ValidatorPlugin,
    build_reference,
    clear_validator_plugins,
    compare_buffers,
    register_validator_plugin,
    registered_validator_plugins,
    validate,
)

from oracle import init_values, matmul_f32


@pytest.fixture(scope="module")
def small_refs(matmul_small_ctx):
    # both input keys (n=16, n=64) captured once for the whole module
    return build_reference(matmul_small_ctx, budget=4, seed=7)


class TestCompareBuffers:
    def test_identical(self):
        buf = np.arange(8, dtype=np.float32).tobytes()
        res = compare_buffers(buf, buf, DEFAULT_TOLERANCES["f32"])
        assert res.match and res.worst_error == 0.0

    def test_reassociated_accumulation_within_tolerance(self):
        n = 64
        a = init_values("random", 11, "f32", n * n).reshape(n, n)
        b = init_values("random", 23, "f32", n * n).reshape(n, n)
        sequential = matmul_f32(a, b)
        # tiled ordering: per-tile partial sums added to the accumulator
        tiled = np.zeros((n, n), dtype=np.float32)
        for kt in range(0, n, 16):
            part = np.zeros((n, n), dtype=np.float32)
            for k in range(kt, kt + 16):
                part += a[:, k:k + 1] * b[k:k + 1, :]
            tiled += part
        assert not np.array_equal(tiled, sequential)  # ordering really differs
        res = compare_buffers(tiled.tobytes(), sequential.tobytes(),
                              DEFAULT_TOLERANCES["f32"])
        assert res.match

    def test_single_element_fault_reported(self):
        ref = np.ones(16, dtype=np.float32)
        cand = ref.copy()
        cand[9] += 1.0
        res = compare_buffers(cand.tobytes(), ref.tobytes(), DEFAULT_TOLERANCES["f32"])
        assert not res.match
        assert res.first_mismatch_index == 9
        assert res.worst_error == pytest.approx(1.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            compare_buffers(b"\0" * 8, b"\0" * 12, DEFAULT_TOLERANCES["f32"])

    def test_i32_is_exact(self):
        ref = np.arange(4, dtype=np.int32)
        cand = ref.copy()
        cand[1] += 1
        assert not compare_buffers(cand.tobytes(), ref.tobytes(),
                                   DEFAULT_TOLERANCES["i32"]).match

    def test_nan_candidate_fails(self):
        ref = np.ones(4, dtype=np.float32)
        cand = ref.copy()
        cand[2] = np.nan
        res = compare_buffers(cand.tobytes(), ref.tobytes(), DEFAULT_TOLERANCES["f32"])
        assert not res.match and res.first_mismatch_index == 2

    def test_monotone_in_tolerance(self):
        ref = np.ones(8, dtype=np.float32)
        cand = ref + 1e-4
        tight = TolerancePolicy(abs_tol=1e-6, rel_tol=1e-6, dtype="f32")
        loose = TolerancePolicy(abs_tol=1e-6, rel_tol=1e-3, dtype="f32")
        assert not compare_buffers(cand.tobytes(), ref.tobytes(), tight).match
        assert compare_buffers(cand.tobytes(), ref.tobytes(), loose).match

    def test_reduction_dim_hint_scales_rel_tol(self):
        base = TolerancePolicy(abs_tol=0.0, rel_tol=1e-3, dtype="f32")
        scaled = TolerancePolicy(abs_tol=0.0, rel_tol=1e-3, dtype="f32",
                                 reduction_dim_hint=4096)
        assert scaled.effective_rel_tol() == pytest.approx(8e-3)
        assert base.effective_rel_tol() == pytest.approx(1e-3)


class TestBuildReference:
    def test_seed_outputs_match_oracle(self, small_refs, matmul_small_ctx):
        for n in (16, 64):
            key = next(k for k in small_refs.entries if (("n", n),) == k[0])
            got = np.frombuffer(small_refs.entries[key]["C"], dtype=np.float32)
            a = init_values("random", 11, "f32", n * n).reshape(n, n)
            b = init_values("random", 23, "f32", n * n).reshape(n, n)
            assert np.array_equal(got.reshape(n, n), matmul_f32(a, b))
        assert small_refs.seed_digest == digest(matmul_small_ctx)

    def test_no_outputs_declared(self, matmul_small_ctx):
        spec = parse_spec("input n: i32 in {4}\ninput A: array<f32> size in {n} init zeros\n")
        ctx = KernelContext(
            device="void k(const float *A, int n) {}",
            host="void launch_k(const float *A, int n) { peak_dim3 d={1,1,1}; PEAK_LAUNCH(k,d,d,A,n); }",
            macros="", spec=spec, backend="cpu-ref", kernel_name="k")
        with pytest.raises(SeedExecutionFailure, match="no outputs"):
            build_reference(ctx, budget=1, seed=0)

    def test_deterministic(self, matmul_small_ctx, small_refs):
        again = build_reference(matmul_small_ctx, budget=4, seed=7)
        assert again.entries == small_refs.entries

    def test_budget_caps_keys(self, matmul_small_ctx):
        refs = build_reference(matmul_small_ctx, budget=1, seed=3)
        assert len(refs.entries) == 1

    def test_persistence_round_trip(self, tmp_path, small_refs):
        small_refs.save(tmp_path)
        loaded = ReferenceStore.load(tmp_path)
        assert loaded.entries == small_refs.entries
        assert loaded.seed_digest == small_refs.seed_digest
        assert loaded.dtypes == small_refs.dtypes


class TestValidate:
    def test_seed_validates_against_itself(self, matmul_small_ctx, small_refs):
        report = validate(matmul_small_ctx, small_refs, budget=16, seed=5)
        assert report.passed
        assert report.sampled == 16
        # tuning independence was really exercised: >= 2 values per parameter
        for name in ("BLOCK_X", "BLOCK_Y"):
            assert len({r.params.tuning_values[name] for r in report.records}) >= 2

    def test_transposed_index_bug_rejected(self, matmul_small_ctx, small_refs):
        buggy = KernelContext(
            device=matmul_small_ctx.device.replace("C[i * n + j]", "C[j * n + i]"),
            host=matmul_small_ctx.host, macros=matmul_small_ctx.macros,
            spec=matmul_small_ctx.spec, backend="cpu-ref", kernel_name="matmul")
        report = validate(buggy, small_refs, budget=6, seed=5)
        assert not report.passed
        assert any(r.status == "mismatch" for r in report.records)
        bad = next(r for r in report.records if r.status == "mismatch")
        assert bad.first_mismatch_index is not None

    def test_compile_break_fails_with_compile_status(self, matmul_small_ctx, small_refs):
        broken = KernelContext(
            device=matmul_small_ctx.device + "\nthis does not compile\n",
            host=matmul_small_ctx.host, macros=matmul_small_ctx.macros,
            spec=matmul_small_ctx.spec, backend="cpu-ref", kernel_name="matmul")
        report = validate(broken, small_refs, budget=2, seed=5)
        assert not report.passed
        assert all(r.status == "compile_error" for r in report.records)

    def test_all_invalid_samples_fail(self, matmul_small_ctx, small_refs):
        # a context whose kernel rejects every configuration at runtime
        always_invalid = KernelContext(
            device=matmul_small_ctx.device.replace(
                "float acc = 0.0f;", "PEAK_REQUIRE(0); float acc = 0.0f;"),
            host=matmul_small_ctx.host, macros=matmul_small_ctx.macros,
            spec=matmul_small_ctx.spec, backend="cpu-ref", kernel_name="matmul")
        report = validate(always_invalid, small_refs, budget=3, seed=5)
        assert not report.passed
        assert report.reason == "no valid samples"
        assert all(r.status == "invalid_config" for r in report.records)

    def test_incompatible_reference(self, matmul_small_ctx, small_refs):
        grown = parse_spec("input n: i32 in {16, 64, 32}\n"
                           "input A: array<f32> size in {n*n} init random(11)\n"
                           "input B: array<f32> size in {n*n} init random(23)\n"
                           "output C: array<f32> size in {n*n} init zeros\n"
                           "tune BLOCK_X: i32 in pow2(1..=32)\n"
                           "tune BLOCK_Y: i32 in pow2(1..=32)\n"
                           "constraint BLOCK_X * BLOCK_Y <= 1024\n")
        ctx = KernelContext(
            device=matmul_small_ctx.device, host=matmul_small_ctx.host,
            macros=matmul_small_ctx.macros, spec=grown,
            backend="cpu-ref", kernel_name="matmul")
        with pytest.raises(IncompatibleReference):
            validate(ctx, small_refs, budget=200, seed=5)


class TestPlugins:
    def setup_method(self):
        clear_validator_plugins()

    def teardown_method(self):
        clear_validator_plugins()

    def test_error_finding_overrides_matching_outputs(self, matmul_small_ctx, small_refs):
        angry = ValidatorPlugin(
            "always-angry",
            lambda bundle, params, artifact: [PluginFinding("always-angry", "error", "nope")])
        report = validate(matmul_small_ctx, small_refs, budget=2, seed=5, plugins=[angry])
        assert not report.passed
        assert report.reason == "nope"
        assert all(r.status == "match" for r in report.records)

    def test_backend_filter(self, matmul_small_ctx, small_refs):
        calls = []
        cuda_only = ValidatorPlugin(
            "cuda-only", lambda *a: calls.append(1) or [], backends=["cuda"])
        report = validate(matmul_small_ctx, small_refs, budget=2, seed=5,
                          plugins=[cuda_only])
        assert report.passed
        assert calls == []

    def test_crash_degrades_to_warning(self, matmul_small_ctx, small_refs):
        def boom(bundle, params, artifact):
            raise RuntimeError("exploded")
        report = validate(matmul_small_ctx, small_refs, budget=2, seed=5,
                          plugins=[ValidatorPlugin("bomb", boom)])
        assert report.passed
        assert any(f.severity == "warning" and "exploded" in f.message
                   for f in report.plugin_findings)

    def test_registry_duplicate(self):
        register_validator_plugin(ValidatorPlugin("p1", lambda *a: []))
        with pytest.raises(DuplicatePlugin):
            register_validator_plugin(ValidatorPlugin("p1", lambda *a: []))
        assert len(registered_validator_plugins()) == 1

    def test_command_plugin_from_manifest(self, tmp_path, matmul_small_ctx, small_refs):
        from peak.validation import CommandValidatorPlugin
        script = tmp_path / "sanitize.sh"
        script.write_text("#!/bin/sh\necho 'RACE: write-write conflict on C'\n")
        script.chmod(0o755)
        manifest = tmp_path / "plugin.json"
        manifest.write_text(json.dumps({
            "id": "toy-sanitizer",
            "command_template": f"{script} {{{{bundle}}}} {{{{executable}}}}",
            "finding_patterns": [{"pattern": "^RACE:", "severity": "error"}],
            "backends": ["cpu-ref"],
        }))
        plugin = CommandValidatorPlugin.from_manifest(manifest)
        report = validate(matmul_small_ctx, small_refs, budget=2, seed=5,
                          plugins=[plugin])
        assert not report.passed
        assert any(f.plugin_id == "toy-sanitizer" and f.severity == "error"
                   for f in report.plugin_findings)
