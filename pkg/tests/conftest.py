import numpy as np
import pytest

from safeabr.env import synth_manifest
from safeabr.traces import Trace, generate_dataset, parse_distribution


@pytest.fixture(scope="session")
def manifest():
    return synth_manifest(seed=3)


@pytest.fixture(scope="session")
def short_manifest():
    # 12 chunks keeps episode-level tests fast
    return synth_manifest(chunk_count=12, repeats=1, seed=3)


@pytest.fixture(scope="session")
def gamma_traces():
    return generate_dataset(parse_distribution("gamma:shape=2,scale=2"), 12, 300, seed=5, prefix="g")


def constant_trace(rate: float, seconds: int = 100) -> Trace:
    return Trace(np.arange(float(seconds)), np.full(seconds, float(rate)), f"const-{rate}")


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
