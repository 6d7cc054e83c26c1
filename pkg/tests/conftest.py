import os
from pathlib import Path

import pytest

from exprb.reference import CACHE_ENV, RECIPES, build_reference

REPO = Path(__file__).resolve().parents[1]

#: one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def reference_cache():
    """Cache holding the fixed-step references; built once if missing (about a minute)."""
    directory = Path(os.environ.get(CACHE_ENV) or REPO / ".reference_cache")
    for name in RECIPES:
        build_reference(name, directory=directory)
    return directory


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
