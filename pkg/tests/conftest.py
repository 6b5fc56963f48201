import pytest

from tiresrag.world import generate_world


@pytest.fixture(scope="session")
def world():
    return generate_world(seed=7, n_entities=60, n_chains=10, distractors=2)


@pytest.fixture(scope="session")
def default_world():
    return generate_world(seed=0, n_entities=120, n_chains=20, distractors=2)


# acceptance results, one line per criterion, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
