from __future__ import annotations

from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return REPO_ROOT


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # One visible pass/fail line per acceptance criterion.
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in item.nodeid:
        reporter = item.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            status = "PASS" if report.passed else "FAIL"
            reporter.write_line(f"[{status}] {item.name}")
