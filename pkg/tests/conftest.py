import numpy as np
import pytest

from fbq.rates import generate_supercodebook

# acceptance outcomes, filled by test_acceptance and echoed at the end of the run
ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


@pytest.fixture(scope="session")
def small_codebook():
    return generate_supercodebook(6, 8, 200, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
