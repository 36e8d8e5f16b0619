"""GPU backend adapters (CUDA, HIP, HLSL).

These fill the same driver-template slots as the CPU reference backend but
emit the backend's own host language. They are contracts: the generators
run anywhere, while compile() raises ToolchainMissing unless the backend
compiler (nvcc, hipcc, dxc) is installed. The wire protocol is identical
across backends, so everything downstream of `run_artifact` is shared.
"""

from __future__ import annotations

from pathlib import Path

from ..context import KernelContext, substitute_tuning
from ..errors import UnsupportedDtype
from ..speclang import ArrayDecl, ExecutionParams
from . import Backend, TimingPolicy, render_template

_CUDA_TYPES = {"f32": "float", "i32": "int32_t", "f16": "__half"}
_HLSL_TYPES = {"f32": "float", "i32": "int", "f16": "half"}


class GpuBackend(Backend):
    def _elem_type(self, dtype: str) -> str:
        table = _HLSL_TYPES if self.id == "hlsl" else _CUDA_TYPES
        try:
            return table[dtype]
        except KeyError:
            raise UnsupportedDtype(
                f"backend '{self.id}' has no representation for '{dtype}'") from None

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
        capture_dir = Path(capture_dir) if capture_dir else Path(".")

        scalar_lines = []
        for decl in ctx.spec.scalars:
            value = params.scalar_values[decl.name]
            if decl.dtype == "i32":
                scalar_lines.append(f"    const int32_t {decl.name} = {int(value)};")
            else:
                scalar_lines.append(
                    f"    const float {decl.name} = {float(value).hex()}f;")

        array_lines = []
        capture_lines = []
        for decl in ctx.spec.arrays:
            size = params.array_sizes[decl.name]
            ctype = self._elem_type(decl.elem_dtype)
            array_lines.append(self._array_setup(decl, ctype, size))
            if capture_outputs and decl.is_output:
                path = str((capture_dir / f"{decl.name}.bin").resolve())
                capture_lines.append(self._capture_stmt(decl, ctype, path))

        args = [a.name for a in ctx.spec.arrays] + [s.name for s in ctx.spec.scalars]
        return render_template(self.template_text, {
            "max_threads_per_block": self.descriptor.max_threads_per_block,
            "warp_size": self.descriptor.warp_size,
            "macros_region": regions["macros"],
            "device_region": regions["device"],
            "host_region": regions["host"],
            "scalar_setup": "\n".join(scalar_lines),
            "array_setup": "\n".join(array_lines),
            "output_reinit": "",
            "launch_stmt": f"launch_{ctx.kernel_name}({', '.join(args)});",
            "warmup_runs": policy.warmup_runs,
            "measured_runs": policy.measured_runs,
            "debug": 1 if debug else 0,
            "capture_block": "\n".join(capture_lines),
        })

    def _array_setup(self, decl: ArrayDecl, ctype: str, size: int) -> str:
        init = decl.init
        if init.kind == "zeros":
            fill = f"peak_host_{decl.name}[peak_i] = ({ctype})0;"
        elif init.kind == "ones":
            fill = f"peak_host_{decl.name}[peak_i] = ({ctype})1;"
        else:
            fill = (f"peak_host_{decl.name}[peak_i] = "
                    f"({ctype})peak_sm64_symmetric(&peak_st);")
        return "\n".join([
            f"    const int64_t {decl.name}_size = {size};",
            f"    {ctype} *peak_host_{decl.name} = new {ctype}[{decl.name}_size];",
            f"    {{ uint64_t peak_st = {getattr(init, 'seed', 0)}ULL;",
            f"      for (int64_t peak_i = 0; peak_i < {decl.name}_size; ++peak_i) {fill} }}",
            f"    {ctype} *{decl.name} = nullptr;",
            f"    PEAK_ALLOC_COPY({decl.name}, peak_host_{decl.name}, {decl.name}_size, {ctype});",
        ])

    def _capture_stmt(self, decl: ArrayDecl, ctype: str, path: str) -> str:
        return "\n".join([
            f"    PEAK_COPY_BACK(peak_host_{decl.name}, {decl.name}, {decl.name}_size, {ctype});",
            f"    {{ FILE *peak_f = fopen(\"{path}\", \"wb\");",
            "      if (!peak_f) { fprintf(stderr, \"cannot open capture file\\n\"); return 1; }",
            f"      fwrite(peak_host_{decl.name}, sizeof({ctype}), (size_t){decl.name}_size, peak_f);",
            "      fclose(peak_f);",
            f"      printf(\"PEAK_OUT {decl.name} {path}\\n\"); }}",
        ])
