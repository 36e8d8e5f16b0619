"""Checkpointed kernel-optimization workflows driven by natural-language transformations.

The package is organized around the pipeline's stages:

- `speclang` — parse input/tuning specifications and enumerate execution parameters
- `context` — the kernel context (device/host/macros regions + spec) and its digest
- `backends` — driver generation, compile/run orchestration, the CPU reference backend
- `transforms` — transformation catalog, prompt assembly, LLM clients, retry loop
- `validation` — reference outputs and sampled output comparison
- `perf` — tuning-space search, top-K pruning, tuner plugins
- `store` — content-addressed checkpoint store with lineage and trajectories
- `service` — CLI and HTTP API on top of all of the above
"""

from .speclang import (
    ExecutionParams,
    InputSpec,
    enumerate_execution_params,
    parse_spec,
    print_spec,
    sample_execution_params,
)
from .context import KernelContext, ContextDigest

__all__ = [
    "ExecutionParams",
    "InputSpec",
    "KernelContext",
    "ContextDigest",
    "enumerate_execution_params",
    "parse_spec",
    "print_spec",
    "sample_execution_params",
]

__version__ = "0.1.0"
