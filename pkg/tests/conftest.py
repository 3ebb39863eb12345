import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _no_output_root(monkeypatch):
    monkeypatch.delenv("CANOPYNET_OUT", raising=False)


def pytest_report_header(config):
    from canopynet._jit import JIT_ENABLED
    return f"canopynet kernels: {'numba' if JIT_ENABLED else 'numpy'} (CANOPYNET_JIT={os.environ.get('CANOPYNET_JIT', '1')})"


def pytest_terminal_summary(terminalreporter):
    from report import CRITERIA
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {text}")
