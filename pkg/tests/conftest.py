import dataclasses
import os
import time

import pytest

from srnav import harness

WORKERS = os.cpu_count() or 1


@pytest.fixture(scope="session")
def numerical_report():
    """Default numerical study (100 trials), with its wall-clock runtime."""
    cfg = dataclasses.replace(harness.default_config("numerical"), workers=WORKERS)
    t0 = time.perf_counter()
    report = harness.run_numerical_analysis(cfg)
    return report, time.perf_counter() - t0


@pytest.fixture(scope="session")
def benchtop_report():
    cfg = dataclasses.replace(harness.default_config("benchtop-sim"), workers=WORKERS)
    return harness.run_benchtop_sim(cfg)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
