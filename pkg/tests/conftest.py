import pytest

from ecoheat import config

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def cfg():
    return config.load_default()


@pytest.fixture(scope="session")
def setup(cfg):
    return cfg.setup


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` prints and records one criterion line, then asserts."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def emit(n, ok, detail):
        line = f"[C{n}] {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        lines.append(line)
        assert ok, line
    return emit


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[2:s.index("]")])):
            terminalreporter.write_line(line)
