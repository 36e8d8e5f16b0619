"""Performance evaluation: tuning-space search, ranking, tuner plugins.

The evaluator fixes an input key (scalar values + array sizes) and searches
tuning values only. Strategies: exhaustive enumeration, random sampling, or
an autotuner plugin driven through a measurement callable. invalid-config
points are pruned and counted, never ranked. Ties break by enumeration
order so top-K survivor lists are stable across runs.
"""

from __future__ import annotations

import json
import statistics
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .backends import BatchJob, TimingPolicy, compile_and_run, execute_batch, get_backend
from .context import KernelContext, digest
from .errors import (
    DuplicatePlugin,
    IncomparableReports,
    NoValidConfiguration,
    PluginFailure,
)
from .rng import SplitMix64
from .speclang import (
    ExecutionParams,
    Expr,
    TuningDecl,
    check_params,
    concrete_values,
    evaluate_int_expr,
    iter_tuning_space,
)


@dataclass(frozen=True)
class Exhaustive:
    name = "exhaustive"


@dataclass(frozen=True)
class RandomSearch:
    budget: int
    seed: int = 0
    name = "random"

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("random budget must be >= 1")


@dataclass(frozen=True)
class Tuner:
    plugin_id: str
    iteration_budget: int
    repeats: int = 1
    seed: int = 0
    name = "tuner"


Strategy = Exhaustive | RandomSearch | Tuner


@dataclass(frozen=True)
class FlopsModel:
    """Floating-point operations per kernel run, as an expression over
    scalar names and array sizes (dense square MatMul: `2*n*n*n`)."""

    expression: str

    def flops(self, input_params: ExecutionParams) -> int:
        value = evaluate_int_expr(self.expression, input_params.bindings())
        if value <= 0:
            raise ValueError(f"flops model evaluated non-positive ({value})")
        return value


@dataclass(frozen=True)
class PerfQuery:
    input_key: ExecutionParams  # tuning part ignored
    strategy: Strategy = Exhaustive()
    policy: TimingPolicy = TimingPolicy()
    keep_top: int = 128
    confirm_best: int = 0

    def __post_init__(self):
        if self.keep_top < 1:
            raise ValueError("keep_top must be >= 1")


@dataclass
class PerfPoint:
    tuning_values: dict[str, int]
    mean_time_ms: float

    def to_json(self) -> dict:
        return {"tuning_values": dict(self.tuning_values),
                "mean_time_ms": self.mean_time_ms}


@dataclass
class PerfReport:
    ctx_digest: str
    input_key: dict
    strategy: str
    evaluated: int
    pruned_invalid: int
    best: PerfPoint
    top_k: list[PerfPoint]
    flops_per_run: int | None = None
    best_gflops: float | None = None
    distribution: dict[str, float] | None = None  # tuner repeats: min/mean/max
    confirmed_mean_ms: float | None = None
    points: list[PerfPoint] = field(default_factory=list)  # full valid ranking

    @property
    def best_time_ms(self) -> float:
        return self.best.mean_time_ms

    def to_json(self) -> dict:
        return {
            "ctx_digest": self.ctx_digest,
            "input_key": self.input_key,
            "strategy": self.strategy,
            "evaluated": self.evaluated,
            "pruned_invalid": self.pruned_invalid,
            "best": self.best.to_json(),
            "top_k": [p.to_json() for p in self.top_k],
            "flops_per_run": self.flops_per_run,
            "best_gflops": self.best_gflops,
            "distribution": self.distribution,
            "confirmed_mean_ms": self.confirmed_mean_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PerfReport":
        return cls(
            ctx_digest=obj["ctx_digest"],
            input_key=obj["input_key"],
            strategy=obj["strategy"],
            evaluated=obj["evaluated"],
            pruned_invalid=obj["pruned_invalid"],
            best=PerfPoint(**obj["best"]),
            top_k=[PerfPoint(**p) for p in obj["top_k"]],
            flops_per_run=obj.get("flops_per_run"),
            best_gflops=obj.get("best_gflops"),
            distribution=obj.get("distribution"),
            confirmed_mean_ms=obj.get("confirmed_mean_ms"),
        )

    def csv_rows(self) -> str:
        names = sorted(self.best.tuning_values)
        lines = [",".join(names + ["mean_ms"])]
        for p in self.points:
            lines.append(",".join(
                [str(p.tuning_values[n]) for n in names] + [f"{p.mean_time_ms:.9f}"]))
        return "\n".join(lines) + "\n"


# --- tuner plugins -------------------------------------------------------------

Measure = Callable[[dict[str, int]], float | None]


class TunerPlugin:
    """Search driver: propose tuning points through a measurement callable.

    The callable returns the mean time in ms, or None when the point is
    outside the valid space or hits the invalid-config sentinel; invalid
    points cost nothing and must simply be skipped.
    """

    id: str = ""

    def tune(self, measure: Measure, decls: tuple[TuningDecl, ...],
             budget: int, seed: int) -> dict[str, int] | None:
        raise NotImplementedError


def _domain(decls: tuple[TuningDecl, ...]) -> list[dict[str, int]]:
    points: list[dict[str, int]] = [{}]
    for decl in decls:
        values = sorted(concrete_values(decl.values))
        points = [dict(p, **{decl.name: v}) for p in points for v in values]
    return points


class ExhaustiveTuner(TunerPlugin):
    id = "exhaustive"

    def tune(self, measure, decls, budget, seed):
        best, best_time = None, None
        for i, point in enumerate(_domain(decls)):
            if i >= budget:
                break
            t = measure(point)
            if t is not None and (best_time is None or t < best_time):
                best, best_time = point, t
        return best


class RandomSearchTuner(TunerPlugin):
    id = "random-search"

    def tune(self, measure, decls, budget, seed):
        domain = _domain(decls)
        k = min(budget, len(domain))
        rng = SplitMix64(seed)
        best, best_time = None, None
        for i in rng.sample_indices(len(domain), k):
            t = measure(domain[i])
            if t is not None and (best_time is None or t < best_time):
                best, best_time = domain[i], t
        return best


class SubprocessTunerPlugin(TunerPlugin):
    """External tuner speaking line-delimited JSON over stdio.

    Job description goes to stdin first; then the tool writes
    `{"propose": {...}}` lines and reads `{"time_ms": x|null}` replies,
    finishing with `{"done": {...}}` naming its best point.
    """

    def __init__(self, plugin_id: str, argv: list[str]):
        self.id = plugin_id
        self.argv = argv

    def tune(self, measure, decls, budget, seed):
        job = {
            "tuning": [
                {"name": d.name, "values": sorted(concrete_values(d.values))}
                for d in decls
            ],
            "budget": budget,
            "seed": seed,
        }
        proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
        try:
            proc.stdin.write(json.dumps(job) + "\n")
            proc.stdin.flush()
            best = None
            for line in proc.stdout:
                msg = json.loads(line)
                if "propose" in msg:
                    t = measure({k: int(v) for k, v in msg["propose"].items()})
                    proc.stdin.write(json.dumps({"time_ms": t}) + "\n")
                    proc.stdin.flush()
                elif "done" in msg:
                    best = msg["done"]
                    break
            if proc.wait(timeout=60) != 0:
                raise PluginFailure(f"tuner '{self.id}' exited {proc.returncode}")
            return {k: int(v) for k, v in best.items()} if best else None
        finally:
            if proc.poll() is None:
                proc.kill()


_tuner_registry: dict[str, TunerPlugin] = {}
_tuner_lock = threading.Lock()


def register_tuner_plugin(plugin: TunerPlugin) -> None:
    with _tuner_lock:
        if plugin.id in _tuner_registry:
            raise DuplicatePlugin(f"tuner plugin '{plugin.id}' already registered")
        _tuner_registry[plugin.id] = plugin


def get_tuner(plugin_id: str) -> TunerPlugin:
    with _tuner_lock:
        if not _tuner_registry:
            _tuner_registry["exhaustive"] = ExhaustiveTuner()
            _tuner_registry["random-search"] = RandomSearchTuner()
        try:
            return _tuner_registry[plugin_id]
        except KeyError:
            raise PluginFailure(f"no tuner plugin '{plugin_id}'") from None


# --- evaluation ------------------------------------------------------------------

class _PointRunner:
    """Measurement cache over the valid tuning space of one (ctx, input key)."""

    def __init__(self, ctx: KernelContext, query: PerfQuery, parallel_compile: int):
        self.ctx = ctx
        self.query = query
        self.parallel_compile = parallel_compile
        self.space = list(iter_tuning_space(ctx.spec, query.input_key))
        self.index = {self._key(e.tuning_values): i for i, e in enumerate(self.space)}
        self.cache: dict[tuple, float | None] = {}

    @staticmethod
    def _key(tuning_values: dict[str, int]) -> tuple:
        return tuple(sorted(tuning_values.items()))

    def measure_batch(self, entries: list[ExecutionParams]) -> None:
        todo = [e for e in entries if self._key(e.tuning_values) not in self.cache]
        jobs = [BatchJob(self.ctx, e, self.query.policy, capture=False) for e in todo]
        results = execute_batch(jobs, parallel_compile=self.parallel_compile)
        for entry, result in zip(todo, results):
            self.cache[self._key(entry.tuning_values)] = (
                result.mean_time_ms if result.status == "ok" else None)

    def measure_one(self, tuning_values: dict[str, int]) -> float | None:
        key = self._key(tuning_values)
        if key in self.cache:
            return self.cache[key]
        if key not in self.index:
            # out-of-domain or constraint-violating proposal: reject unexecuted
            self.cache[key] = None
            return None
        entry = self.space[self.index[key]]
        if not check_params(self.ctx.spec, entry):
            self.cache[key] = None
            return None
        backend = get_backend(self.ctx.backend)
        result = compile_and_run(
            backend, BatchJob(self.ctx, entry, self.query.policy, capture=False))
        time_ms = result.mean_time_ms if result.status == "ok" else None
        self.cache[key] = time_ms
        return time_ms

    def ranked_points(self) -> tuple[list[PerfPoint], int]:
        """Measured valid points sorted by (time, enumeration order), plus
        the count of measured-but-invalid points."""
        measured: list[tuple[float, int, PerfPoint]] = []
        pruned = 0
        for i, entry in enumerate(self.space):
            key = self._key(entry.tuning_values)
            if key not in self.cache:
                continue
            t = self.cache[key]
            if t is None:
                pruned += 1
            else:
                measured.append((t, i, PerfPoint(dict(entry.tuning_values), t)))
        measured.sort(key=lambda item: (item[0], item[1]))
        return [p for _, _, p in measured], pruned


def evaluate(
    ctx: KernelContext,
    query: PerfQuery,
    flops: FlopsModel | None = None,
    parallel_compile: int = 4,
) -> PerfReport:
    """Search the tuning space for the best runtime under the query."""
    runner = _PointRunner(ctx, query, parallel_compile)
    distribution = None

    if isinstance(query.strategy, Exhaustive):
        runner.measure_batch(runner.space)
    elif isinstance(query.strategy, RandomSearch):
        k = min(query.strategy.budget, len(runner.space))
        if k:
            idx = SplitMix64(query.strategy.seed).sample_indices(len(runner.space), k)
            runner.measure_batch([runner.space[i] for i in idx])
    elif isinstance(query.strategy, Tuner):
        plugin = get_tuner(query.strategy.plugin_id)
        repeat_bests: list[float] = []
        for r in range(query.strategy.repeats):
            best = plugin.tune(
                runner.measure_one, ctx.spec.tuning,
                query.strategy.iteration_budget, query.strategy.seed + r)
            if best is not None:
                t = runner.measure_one(best)
                if t is not None:
                    repeat_bests.append(t)
        if repeat_bests:
            distribution = {
                "min": min(repeat_bests),
                "mean": statistics.fmean(repeat_bests),
                "max": max(repeat_bests),
            }
    else:
        raise TypeError(f"unknown strategy {query.strategy!r}")

    ranked, pruned = runner.ranked_points()
    if not ranked:
        raise NoValidConfiguration(
            "every evaluated execution parameter was invalid"
            if pruned else "the tuning space for this input key is empty")

    best = ranked[0]
    report = PerfReport(
        ctx_digest=digest(ctx).hash,
        input_key=query.input_key.key_json(),
        strategy=query.strategy.name,
        evaluated=len(ranked),
        pruned_invalid=pruned,
        best=best,
        top_k=ranked[: query.keep_top],
        distribution=distribution,
        points=ranked,
    )
    if flops is not None:
        report.flops_per_run = flops.flops(query.input_key)
        report.best_gflops = report.flops_per_run / (best.mean_time_ms / 1e3) / 1e9
    if query.confirm_best > 0:
        backend = get_backend(ctx.backend)
        entry = runner.space[runner.index[runner._key(best.tuning_values)]]
        confirm_policy = TimingPolicy(
            warmup_runs=query.policy.warmup_runs,
            measured_runs=query.confirm_best)
        result = compile_and_run(backend, BatchJob(ctx, entry, confirm_policy, False))
        if result.status == "ok":
            report.confirmed_mean_ms = result.mean_time_ms
    return report


def speedup(a: PerfReport, b: PerfReport) -> float:
    """How much faster `a` is than `b` (b.best_time / a.best_time)."""
    if a.input_key != b.input_key:
        raise IncomparableReports("reports cover different input keys")
    if a.flops_per_run != b.flops_per_run:
        raise IncomparableReports("reports use different flops models")
    return b.best.mean_time_ms / a.best.mean_time_ms


def percent_of(report: PerfReport, reference_time_ms: float) -> float:
    """Best time as a percentage of a user-supplied library reference time."""
    return reference_time_ms / report.best.mean_time_ms * 100.0


def tuner_sweep(
    ctx: KernelContext,
    input_key: ExecutionParams,
    plugin_id: str,
    budgets: list[int],
    repeats: int,
    policy: TimingPolicy = TimingPolicy(),
    seed: int = 0,
    parallel_compile: int = 4,
) -> dict[int, dict[str, float]]:
    """Best-found time distribution per iteration budget.

    Each budget runs the tuner `repeats` times with distinct seeds; failed
    repeats are excluded and counted.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    plugin = get_tuner(plugin_id)
    query = PerfQuery(input_key=input_key, policy=policy)
    runner = _PointRunner(ctx, query, parallel_compile)
    sweep: dict[int, dict[str, float]] = {}
    for budget in budgets:
        bests: list[float] = []
        failures = 0
        for r in range(repeats):
            try:
                best = plugin.tune(
                    runner.measure_one, ctx.spec.tuning, budget,
                    seed + budget * 1000 + r)
                t = runner.measure_one(best) if best is not None else None
            except Exception:  # a broken plugin loses the repeat, nothing else
                t = None
            if t is None:
                failures += 1
            else:
                bests.append(t)
        sweep[budget] = {
            "min": min(bests) if bests else float("nan"),
            "mean": statistics.fmean(bests) if bests else float("nan"),
            "max": max(bests) if bests else float("nan"),
            "failed_repeats": float(failures),
        }
    return sweep
