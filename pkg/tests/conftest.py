"""Keeps the tests directory importable so suites can share helpers.py.

Also prints one PASS/FAIL line per acceptance criterion after the run:
the acceptance tests record their line through the ``criterion`` fixture,
and ``pytest_terminal_summary`` writes the collected lines where output
capture cannot swallow them.
"""

import contextlib
import time

import pytest

_ACCEPTANCE_LINES = []


class _CriterionRecord:
    def __init__(self, code: str, title: str):
        self.code = code
        self.title = title
        self.detail = ""

    def note(self, text: str) -> None:
        self.detail = text


@pytest.fixture
def criterion():
    """Context manager recording a one-line verdict for one criterion."""

    @contextlib.contextmanager
    def run(code: str, title: str):
        record = _CriterionRecord(code, title)
        t0 = time.time()
        try:
            yield record
        except BaseException:
            _ACCEPTANCE_LINES.append(
                f"[{code}] FAIL ({time.time() - t0:6.1f}s) {title}"
                + (f" — {record.detail}" if record.detail else "")
            )
            raise
        _ACCEPTANCE_LINES.append(
            f"[{code}] PASS ({time.time() - t0:6.1f}s) {title}"
            + (f" — {record.detail}" if record.detail else "")
        )

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
