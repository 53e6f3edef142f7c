import os
from pathlib import Path

import pytest

os.environ.setdefault("RTFN_THREADS", "1")

ROOT = Path(__file__).resolve().parents[1]
UCR_DIR = ROOT / "data" / "ucr"
CONFIG_DIR = ROOT / "configs"

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def ucr_dir():
    return UCR_DIR


@pytest.fixture
def acceptance(request):
    """``record(number, title, ok, detail)`` logs one PASS/FAIL line and returns ``ok``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  [{number:>2}] {title}" + (f": {detail}" if detail else "")
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
