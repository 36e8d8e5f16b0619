from __future__ import annotations

import pytest

from peak.backends import TimingPolicy, get_backend
from peak.context import KernelContext, load_bundle
from peak.speclang import parse_spec

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: acceptance criterion (one line per criterion "
        "in the terminal summary)")


def pytest_runtest_logreport(report):
    if report.when != "call" or "acceptance" not in report.keywords:
        return
    name = report.nodeid.split("::")[-1].removeprefix("test_")
    _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, verdict in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"ACCEPTANCE {name}: {verdict}")

SEEDS_DIR = "src/peak/data/seeds"

FAST_POLICY = TimingPolicy(warmup_runs=0, measured_runs=1)


@pytest.fixture(scope="session")
def cpu_backend():
    return get_backend("cpu-ref")


@pytest.fixture(scope="session")
def matmul_small_ctx() -> KernelContext:
    from importlib import resources
    bundle = resources.files("peak") / "data" / "seeds" / "matmul_small"
    return load_bundle(str(bundle))


@pytest.fixture(scope="session")
def matmul_seed_ctx() -> KernelContext:
    from importlib import resources
    bundle = resources.files("peak") / "data" / "seeds" / "matmul"
    return load_bundle(str(bundle))


def forced_time_ctx(expr: str = "10.0 * @TUNE(T)", values: str = "{1,2,4}") -> KernelContext:
    """Synthetic kernel whose reported runtime is exactly `expr` ms."""
    spec = parse_spec(f"input n: i32 in {{1}}\ntune T: i32 in {values}\n")
    return KernelContext(
        device=f"void ticker(int n) {{ PEAK_FORCE_TIME_MS({expr}); }}",
        host=("void launch_ticker(int n) "
              "{ peak_dim3 d = {1, 1, 1}; PEAK_LAUNCH(ticker, d, d, n); }"),
        macros="",
        spec=spec,
        backend="cpu-ref",
        kernel_name="ticker",
    )
