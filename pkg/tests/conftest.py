import sys
from pathlib import Path

import numpy as np
import pytest

from barseg import backend

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=sorted(backend.available()))
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    previous = backend.name
    backend.use(request.param)
    yield request.param
    backend.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report(request):
    """Write an ``ACCEPTANCE <n> PASS|FAIL`` line now and again in the final summary."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(n: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        else:
            print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
