import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (title, passed, details); filled as acceptance tests finish
_CRITERIA = defaultdict(list)
_INFO = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    props = dict(item.user_properties)
    if "info" in props and report.when == "call":
        _INFO.append(props["info"])
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        _CRITERIA[number].append((title, report.passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(p for _, p, _ in parts)
        title = parts[0][0]
        detail = "; ".join(d for _, _, d in parts if d)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" | {detail}" if detail else ""))
    for line in _INFO:
        tr.write_line(f"[INFO] {line}")
