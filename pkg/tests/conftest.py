from importlib import resources

import pytest

from reflectron.markov import StochasticMatrix


@pytest.fixture(scope="session")
def chain6():
    """Bundled six-state chain and its flag set of stationary mass 0.1."""
    text = (resources.files("reflectron") / "data" / "chain6.json").read_text()
    return StochasticMatrix.from_json(text), frozenset({0, 1})


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Print and record one PASS/FAIL line, then assert the criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def _report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
        print(line)
        lines.append((number, line))
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
