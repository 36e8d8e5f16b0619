"""Kernel context: placeholders, regions, digests, serialization."""

from __future__ import annotations

import pytest

from peak.context import (
    KernelContext,
    canonical_deserialize,
    canonical_serialize,
    check_placeholder_closure,
    digest,
    load_bundle,
    replace_region,
    save_bundle,
    substitute_tokens,
    substitute_tuning,
)
from peak.errors import (
    ContextError,
    MissingTuningValue,
    OrphanDeclaration,
    OrphanPlaceholder,
    UnknownPlaceholder,
)
from peak.speclang import ExecutionParams, parse_spec


def make_ctx(**overrides) -> KernelContext:
    fields = dict(
        device="void k(int n) { int t = @TUNE(TILE_K_SIZE); (void)t; }",
        host="void launch_k(int n) { peak_dim3 d = {1,1,1}; PEAK_LAUNCH(k, d, d, n); }",
        macros="",
        spec=parse_spec("input n: i32 in {4}\ntune TILE_K_SIZE: i32 in {8,16,32}\n"),
        backend="cpu-ref",
        kernel_name="k",
        label="test",
    )
    fields.update(overrides)
    return KernelContext(**fields)


class TestSubstitution:
    def test_tile_loop_bound(self):
        text = "for (int kk = 0; kk < @TUNE(TILE_K_SIZE); ++kk)"
        out = substitute_tokens(text, {"TILE_K_SIZE": 16}, {"TILE_K_SIZE"})
        assert out == "for (int kk = 0; kk < 16; ++kk)"

    def test_no_tuning_is_identity(self):
        ctx = make_ctx(
            device="void k(int n) {}",
            spec=parse_spec("input n: i32 in {4}\n"))
        regions = substitute_tuning(ctx, ExecutionParams({"n": 4}, {}, {}))
        assert regions == {"device": ctx.device, "host": ctx.host, "macros": ""}

    def test_undeclared_placeholder(self):
        with pytest.raises(UnknownPlaceholder):
            substitute_tokens("x = @TUNE(FOO);", {}, {"BAR"})

    def test_missing_value(self):
        ctx = make_ctx()
        with pytest.raises(MissingTuningValue):
            substitute_tuning(ctx, ExecutionParams({"n": 4}, {}, {}))

    def test_no_token_survives(self):
        ctx = make_ctx()
        regions = substitute_tuning(ctx, ExecutionParams({"n": 4}, {}, {"TILE_K_SIZE": 8}))
        assert "@TUNE(" not in regions["device"]

    def test_malformed_token_rejected(self):
        with pytest.raises(OrphanPlaceholder, match="malformed"):
            substitute_tokens("x = @TUNE(123);", {}, set())


class TestConstruction:
    def test_orphan_placeholder_rejected(self):
        with pytest.raises(OrphanPlaceholder):
            make_ctx(spec=parse_spec("input n: i32 in {4}\n"))

    def test_kernel_name_must_appear_in_device(self):
        with pytest.raises(ContextError):
            make_ctx(kernel_name="absent")

    def test_closure_flags_unused_declaration(self):
        ctx = make_ctx(spec=parse_spec(
            "input n: i32 in {4}\ntune TILE_K_SIZE: i32 in {8}\ntune UNUSED: i32 in {1}\n"))
        with pytest.raises(OrphanDeclaration, match="UNUSED"):
            check_placeholder_closure(ctx)

    def test_closure_accepts_exact_match(self):
        check_placeholder_closure(make_ctx())

    def test_line_endings_normalized(self):
        ctx = make_ctx(device="void k(int n) {\r\n int t = @TUNE(TILE_K_SIZE);\r (void)t; }")
        assert "\r" not in ctx.device


class TestReplaceRegion:
    def test_replace_macros_changes_digest(self):
        ctx = make_ctx()
        new = replace_region(ctx, "macros", "#define TIDX threadIdx.x\n")
        assert new.macros.startswith("#define TIDX")
        assert digest(new) != digest(ctx)
        assert new.device == ctx.device and new.host == ctx.host

    def test_replace_with_same_text_keeps_digest(self):
        ctx = make_ctx()
        assert digest(replace_region(ctx, "device", ctx.device)) == digest(ctx)

    def test_new_placeholder_without_declaration(self):
        ctx = make_ctx()
        with pytest.raises(OrphanPlaceholder, match="NEW"):
            replace_region(ctx, "device", "void k(int n) { int x = @TUNE(NEW); }")


class TestDigest:
    def test_equal_contexts_equal_digests(self):
        assert digest(make_ctx()) == digest(make_ctx())

    def test_device_flip_changes_digest(self):
        a = make_ctx()
        b = make_ctx(device=a.device.replace("int t", "int u"))
        assert digest(a) != digest(b)

    def test_backend_tag_is_identity(self):
        assert digest(make_ctx()) != digest(make_ctx(backend="cuda"))

    def test_label_excluded_from_identity(self):
        assert digest(make_ctx(label="a")) == digest(make_ctx(label="b"))
        assert canonical_serialize(make_ctx(label="a")) != canonical_serialize(make_ctx(label="b"))

    def test_short_form(self):
        d = digest(make_ctx())
        assert d.short == d.hash[:12]
        assert len(d.hash) == 64


class TestSerialization:
    def test_round_trip(self):
        ctx = make_ctx()
        assert canonical_deserialize(canonical_serialize(ctx)) == ctx

    def test_deterministic_bytes(self, matmul_small_ctx):
        a = canonical_serialize(matmul_small_ctx)
        b = canonical_serialize(matmul_small_ctx)
        assert a == b

    def test_digest_stable_across_round_trip(self, matmul_small_ctx):
        restored = canonical_deserialize(canonical_serialize(matmul_small_ctx))
        assert digest(restored) == digest(matmul_small_ctx)

    def test_bundle_round_trip(self, tmp_path, matmul_small_ctx):
        save_bundle(matmul_small_ctx, tmp_path / "bundle")
        loaded = load_bundle(tmp_path / "bundle")
        assert loaded == matmul_small_ctx
        assert (tmp_path / "bundle" / "spec.pspec").exists()
        assert (tmp_path / "bundle" / "meta").exists()
