import logging

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    def record(name, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return record


@pytest.fixture(autouse=True)
def _quiet_margin_warnings():
    # default cos margins (m=0.35, gamma=0.05) trip the gamma > m/10 advisory on every config
    logging.getLogger("deep_rpcl.margin_losses").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
