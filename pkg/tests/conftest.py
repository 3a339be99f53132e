import pytest

from spdarts import data
from spdarts.space import SearchSpaceSpec
from spdarts.trainer import SearchConfig


@pytest.fixture(scope="session")
def tiny_data():
    return data.generate(data.DataConfig(feature_dim=4, sizes=(256, 128, 128), seed=5))


@pytest.fixture
def tiny_config():
    return SearchConfig(epochs=4, batch_size=32, space=SearchSpaceSpec(2, 4), seed=1)


# one line per acceptance criterion, printed after the run
VERDICTS: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
