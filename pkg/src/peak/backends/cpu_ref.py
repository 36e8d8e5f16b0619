"""CPU reference backend: a sequential grid interpreter in C.

The driver template compiles the three context regions plus generated
setup/timing/capture code as one C translation unit. Grid semantics: every
block and thread iterates in row-major order with one kernel invocation per
(block, thread) pair. Kernels that would need barriers use the block-level
idiom from the snippet library (`PEAK_BLOCK_LEVEL` + `PEAK_THREAD_LOOP`);
shared memory is per-block static scratch zeroed between blocks.

Contract with host regions: the host must define

    void launch_<kernel_name>(<array pointers..., scalars...>)

with arrays then scalars, each group in spec declaration order. Outputs are
re-initialized before every launch, so repeated timed launches always start
from the declared initial state.
"""

from __future__ import annotations

from pathlib import Path

from ..context import KernelContext, substitute_tuning
from ..errors import UnsupportedDtype
from ..speclang import ArrayDecl, ExecutionParams, InitRule
from . import Backend, TimingPolicy, render_template

_C_TYPES = {"f32": "float", "i32": "int32_t", "f16": "uint16_t"}


def _c_type(dtype: str) -> str:
    try:
        return _C_TYPES[dtype]
    except KeyError:
        raise UnsupportedDtype(f"cpu-ref has no representation for '{dtype}'") from None


def _c_scalar_literal(dtype: str, value) -> str:
    if dtype == "i32":
        return str(int(value))
    # exact round trip via hexadecimal float literals
    return f"{float(value).hex()}f"


def _init_block(decl: ArrayDecl, indent: str) -> str:
    name, size = decl.name, f"{decl.name}_size"
    ctype = _c_type(decl.elem_dtype)
    init: InitRule = decl.init
    if init.kind == "zeros":
        return f"{indent}memset({name}, 0, (size_t){size} * sizeof({ctype}));"
    if init.kind == "ones":
        one = {"f32": "1.0f", "i32": "1", "f16": "0x3C00"}[decl.elem_dtype]
        return (f"{indent}for (int64_t peak_i = 0; peak_i < {size}; ++peak_i) "
                f"{name}[peak_i] = {one};")
    draw = {
        "f32": "(float)peak_sm64_symmetric(&peak_st)",
        "f16": "peak_float_to_half((float)peak_sm64_symmetric(&peak_st))",
        "i32": "peak_sm64_int(&peak_st)",
    }[decl.elem_dtype]
    return (f"{indent}{{ uint64_t peak_st = {init.seed}ULL; "
            f"for (int64_t peak_i = 0; peak_i < {size}; ++peak_i) "
            f"{name}[peak_i] = {draw}; }}")


class CpuRefBackend(Backend):
    def generate_driver(
        self,
        ctx: KernelContext,
        params: ExecutionParams,
        policy: TimingPolicy,
        capture_outputs: bool,
        capture_dir: Path | str | None = None,
        debug: bool = False,
    ) -> str:
        regions = substitute_tuning(ctx, params)

        scalar_lines = []
        for decl in ctx.spec.scalars:
            value = params.scalar_values[decl.name]
            ctype = "float" if decl.dtype in ("f32", "f16") else "int32_t"
            scalar_lines.append(
                f"    const {ctype} {decl.name} = "
                f"{_c_scalar_literal(decl.dtype, value)};")

        array_lines = []
        for decl in ctx.spec.arrays:
            size = params.array_sizes[decl.name]
            ctype = _c_type(decl.elem_dtype)
            array_lines.append(f"    const int64_t {decl.name}_size = {size};")
            array_lines.append(
                f"    {ctype} *{decl.name} = ({ctype} *)malloc("
                f"(size_t){decl.name}_size * sizeof({ctype}));")
            array_lines.append(
                f"    if (!{decl.name}) {{ fprintf(stderr, \"allocation failed\\n\"); "
                f"return 1; }}")
            array_lines.append(_init_block(decl, "    "))

        reinit_lines = [
            _init_block(decl, "        ")
            for decl in ctx.spec.arrays if decl.is_output
        ]

        args = [a.name for a in ctx.spec.arrays] + [s.name for s in ctx.spec.scalars]
        launch_stmt = f"launch_{ctx.kernel_name}({', '.join(args)});"

        capture_lines = []
        if capture_outputs:
            capture_dir = Path(capture_dir) if capture_dir else Path(".")
            for decl in ctx.spec.arrays:
                if not decl.is_output:
                    continue
                path = str((capture_dir / f"{decl.name}.bin").resolve())
                ctype = _c_type(decl.elem_dtype)
                capture_lines.append(
                    "    { FILE *peak_f = fopen(\"%s\", \"wb\");\n"
                    "      if (!peak_f) { fprintf(stderr, \"cannot open capture file\\n\"); return 1; }\n"
                    "      fwrite(%s, sizeof(%s), (size_t)%s_size, peak_f);\n"
                    "      fclose(peak_f);\n"
                    "      printf(\"PEAK_OUT %s %s\\n\"); }"
                    % (path, decl.name, ctype, decl.name, decl.name, path))

        return render_template(self.template_text, {
            "max_threads_per_block": self.descriptor.max_threads_per_block,
            "warp_size": self.descriptor.warp_size,
            "macros_region": regions["macros"],
            "device_region": regions["device"],
            "host_region": regions["host"],
            "scalar_setup": "\n".join(scalar_lines),
            "array_setup": "\n".join(array_lines),
            "output_reinit": "\n".join(reinit_lines),
            "launch_stmt": launch_stmt,
            "warmup_runs": policy.warmup_runs,
            "measured_runs": policy.measured_runs,
            "debug": 1 if debug else 0,
            "capture_block": "\n".join(capture_lines),
        })
