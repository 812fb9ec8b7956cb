import os
from pathlib import Path

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def fixture_config():
    return DATA / "fixture_config.json"


# -- acceptance registry ---------------------------------------------------
# test_acceptance.py records one verdict per check; the summary hook prints one
# line per criterion, failing the criterion if any of its checks failed.

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    board = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, ok, detail: str = "") -> bool:
        checks = board.setdefault(number, {"title": title, "checks": []})["checks"]
        checks.append((ok, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    board = config.stash.get(_ACCEPTANCE, None)
    if not board:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(board):
        entry = board[number]
        status = "PASS" if all(ok for ok, _ in entry["checks"]) else "FAIL"
        detail = "; ".join(d for _, d in entry["checks"] if d)
        terminalreporter.write_line(f"[{status}] {number:>2}. {entry['title']}: {detail}")
