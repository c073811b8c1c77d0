import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("fpstab", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("fpstab")

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class CriterionRecorder:
    """Times one acceptance criterion and records a PASS/FAIL line."""

    def __init__(self, lines, capsys):
        self.lines = lines
        self.capsys = capsys

    def _emit(self, line):
        self.lines.append(line)
        with self.capsys.disabled():
            print("\n" + line)

    @contextmanager
    def __call__(self, number, title, budget):
        info = {"detail": ""}
        start = time.perf_counter()
        try:
            yield info
        except BaseException as exc:
            elapsed = time.perf_counter() - start
            reason = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            self._emit(f"criterion {number:2d} FAIL  {title}  ({elapsed:.1f}s)  {reason}")
            raise
        elapsed = time.perf_counter() - start
        ok = budget is None or elapsed <= budget
        limit = f" / {budget:g}s" if budget else ""
        status = "PASS" if ok else "FAIL"
        self._emit(f"criterion {number:2d} {status}  {title}  ({elapsed:.1f}s{limit})  {info['detail']}")
        assert ok, f"runtime {elapsed:.1f}s exceeds {budget}s"


@pytest.fixture
def criterion(request, capsys):
    lines = request.config.stash.setdefault(_CRITERIA, [])
    return CriterionRecorder(lines, capsys)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
