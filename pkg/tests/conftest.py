import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from shiplanding import config, design  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def cache_root(tmp_path_factory):
    """Set cache shared by the whole session (honours SHMPC_CACHE_DIR when set)."""
    env = os.environ.get(config.CACHE_ENV)
    return Path(env) if env else tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def cfg():
    return config.load()


@pytest.fixture(scope="session")
def dsn(cfg, cache_root):
    return design.build(cfg, cache=cache_root)


def record(criterion, ok, detail):
    line = f"[criterion {criterion:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
