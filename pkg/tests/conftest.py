import numpy as np
import pytest

from ctxfusion import kernels
from ctxfusion.data import build_dataset
from ctxfusion.synth import synth_generate


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per compiled/fallback kernel backend."""
    previous = kernels.use(request.param)
    yield request.param
    kernels.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return build_dataset(synth_generate(200, seed=3), n=200, seed=3, len_max=16, vocab_size=300)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if rep.when == "call" and "criterion" in props:
                lines.append((int(props["criterion"][1:]), props["criterion"], outcome, props["detail"]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, name, outcome, detail in sorted(lines):
            terminalreporter.write_line(f"{name} {'PASS' if outcome == 'passed' else 'FAIL'}  {detail}")
