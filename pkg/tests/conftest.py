import numpy as np
import pytest

from dgn.embeddings import EmbeddingTable
from dgn.hotpot_io import SpExample
from dgn.synthetic import make_corpus

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_table():
    return EmbeddingTable(["a", "b"], np.array([[1.0, 0.0], [0.0, 1.0]]))


@pytest.fixture
def watts_example():
    return SpExample(
        "watts",
        "When was Erik Watts' father born?",
        [
            ("Erik Watts", ["Erik Watts is the son of WWE Hall of Famer Bill Watts.",
                            "He made his debut in 1992."]),
            ("Bill Watts", ["William F. Watts Jr. (born May 5, 1939) is an American former professional "
                            "wrestler, promoter, and WWE Hall of Fame Inductee (2009)."]),
        ],
        [("Erik Watts", 0), ("Bill Watts", 0)],
    )


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(40, seed=11, dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
